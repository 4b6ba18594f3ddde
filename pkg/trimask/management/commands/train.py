import logging

from trimask.experiments import (
    build_dataset,
    build_hyper,
    build_model,
    build_validation,
    train_kwargs,
)
from trimask.management.base import ExperimentCommand
from trimask.training import train

logger = logging.getLogger("trimask.commands")


class Command(ExperimentCommand):
    help = "Trains the toy transformer on a token budget and writes its RunRecord."
    label = "train"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            "--records",
            default=None,
            help="Run log to append the RunRecord to, besides the output directory.",
        )

    def run(self, config, writer, **options):
        model = build_model(config)
        dataset = build_dataset(config, model.vocab)
        record = train(
            model,
            dataset,
            hyper=build_hyper(config),
            validation=build_validation(config, model.vocab),
            checkpoint=writer.path("model.pt"),
            record_log=options["records"],
            **train_kwargs(config),
        )
        writer.write_jsonl("runs.jsonl", [record.as_dict()])
        writer.write_json("run.json", {"config": config.as_dict(), "record": record})
