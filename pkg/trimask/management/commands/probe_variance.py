import numpy as np

from trimask.checkpoints import load_checkpoint
from trimask.experiments import build_dataset, build_model
from trimask.management.base import ExperimentCommand
from trimask.training import MIN_PROBE_BATCHES, grad_variance_probe


class Command(ExperimentCommand):
    help = "Compares minibatch gradient variance under iid masking and anti-masking."
    label = "probe-variance"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            "--batches", type=int, default=MIN_PROBE_BATCHES, help="Minibatches per mode."
        )
        parser.add_argument(
            "--batch-size",
            type=int,
            dest="batch_size",
            default=8,
            help="Views per minibatch (even).",
        )
        parser.add_argument(
            "--pool", type=int, default=64, help="Samples drawn from the dataset to probe on."
        )
        parser.add_argument(
            "--checkpoint", default=None, help="Probe a trained model instead of a fresh one."
        )

    def run(self, config, writer, **options):
        if options["checkpoint"]:
            model, _ = load_checkpoint(options["checkpoint"])
        else:
            model = build_model(config)
        dataset = build_dataset(config, model.vocab)
        samples = dataset.draw(options["pool"], np.random.default_rng(config.run.seed))
        report = grad_variance_probe(
            model,
            samples,
            schedule=config.training.schedule,
            n_batches=options["batches"],
            batch_size=options["batch_size"],
            seed=config.run.seed,
            z_loss=config.training.z_loss,
            time_floor=config.training.time_floor,
        )
        writer.write_json("variance.json", {"report": report})
