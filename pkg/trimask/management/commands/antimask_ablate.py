import logging

from trimask.exceptions import InvalidArgument
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

# (label, anti_mask, epochs): both arms see every unique sample twice.
ARMS = (("baseline", False, 2), ("anti_mask", True, 1))


class Command(ExperimentCommand):
    help = (
        "Trains a compute-matched pair: two epochs of iid masking against one "
        "epoch of anti-masked pairs over the same token budget."
    )
    label = "antimask-ablate"

    def run(self, config, writer, **options):
        if config.training.batch_size % 2:
            raise InvalidArgument("The ablation needs an even batch size")
        records = {}
        for name, anti_mask, epochs in ARMS:
            arm = config.set("training", "anti_mask", anti_mask).set("training", "epochs", epochs)
            model = build_model(arm)
            logger.info("Ablation arm %s", name)
            records[name] = train(
                model,
                build_dataset(arm, model.vocab),
                hyper=build_hyper(arm),
                validation=build_validation(arm, model.vocab),
                **train_kwargs(arm),
            )
        baseline, anti = records["baseline"], records["anti_mask"]
        writer.write_jsonl("runs.jsonl", [baseline.as_dict(), anti.as_dict()])
        writer.write_json(
            "ablation.json",
            {
                "d_tokens": baseline.d_tokens,
                "baseline": baseline,
                "anti_mask": anti,
                "loss_delta": anti.final_loss - baseline.final_loss,
            },
        )
