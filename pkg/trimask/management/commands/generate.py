import logging

from trimask import DEFAULT_DENOISER
from trimask.checkpoints import load_checkpoint
from trimask.denoisers import get_denoiser
from trimask.exceptions import InvalidConfig, InvalidDenoiserError
from trimask.experiments import build_sampler_config
from trimask.management.base import ExperimentCommand, int_list
from trimask.sampler import generate_many, init_masked
from trimask.vocab import TaskKind, get_vocab

logger = logging.getLogger("trimask.commands")


class Command(ExperimentCommand):
    help = "Generates sequences with the reverse sampler."
    label = "generate"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        source = parser.add_mutually_exclusive_group()
        source.add_argument("--checkpoint", default=None, help="Model checkpoint to sample from.")
        source.add_argument(
            "--denoiser",
            default=None,
            help="Alias from the DENOISERS setting (default: %s)." % DEFAULT_DENOISER,
        )
        parser.add_argument(
            "--task",
            default="text",
            choices=[task.value for task in TaskKind],
            help="What to generate.",
        )
        parser.add_argument(
            "--prompt", type=int_list, default=[], help="Comma-separated text payload ids."
        )
        parser.add_argument(
            "--target-len",
            type=int,
            dest="target_len",
            default=16,
            help="Number of positions to generate.",
        )
        parser.add_argument(
            "--length",
            type=int,
            default=None,
            help="Pad the layout to this sequence length.",
        )
        parser.add_argument("--count", type=int, default=1, help="Number of samples.")
        parser.add_argument(
            "--sampler-preset",
            dest="sampler_preset",
            default=None,
            help="Inference preset (image, audio, text, image-ablation).",
        )
        parser.add_argument(
            "--trace", action="store_true", help="Record which positions each step revealed."
        )

    def denoiser(self, options):
        if options["checkpoint"]:
            model, _ = load_checkpoint(options["checkpoint"])
            if model.vocab != get_vocab():
                raise InvalidDenoiserError(
                    "Checkpoint vocabulary %r does not match the configured one" % model.vocab
                )
            return model
        alias = options["denoiser"] or DEFAULT_DENOISER
        denoiser = get_denoiser(alias)
        if denoiser is None:
            raise InvalidConfig("No denoiser configured under %r" % alias)
        return denoiser

    def run(self, config, writer, **options):
        if options["count"] < 1:
            raise InvalidConfig("--count must be positive")
        denoiser = self.denoiser(options)
        sampler = build_sampler_config(config, options["sampler_preset"])
        vocab = get_vocab()
        states = [
            init_masked(
                vocab,
                options["task"],
                options["prompt"],
                options["target_len"],
                options["length"],
            )
            for _ in range(options["count"])
        ]
        results = generate_many(denoiser, states, sampler, config.run.seed)
        generations = []
        for result in results:
            generation = {"tokens": result.to_list()}
            if options["trace"]:
                generation["trace"] = result.trace
            generations.append(generation)
        logger.info("Generated %d %s samples", len(results), options["task"])
        writer.write_json(
            "generations.json",
            {
                "request": {
                    "task": options["task"],
                    "prompt": options["prompt"],
                    "target_len": options["target_len"],
                    "count": options["count"],
                    "seed": config.run.seed,
                    "sampler": sampler,
                },
                "generations": generations,
            },
        )
