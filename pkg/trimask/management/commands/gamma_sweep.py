import logging

from trimask.exceptions import InvalidArgument
from trimask.experiments import build_dataset, build_hyper, build_model, train_kwargs
from trimask.management.base import ExperimentCommand, float_list, int_list
from trimask.records import read_records
from trimask.sde import REFERENCE_DRIFT_HORIZON, fit_drift_horizon, gamma_star_numeric
from trimask.training import train

logger = logging.getLogger("trimask.commands")


class Command(ExperimentCommand):
    help = (
        "Fits the drift/horizon law over SDE-rescaled runs and reports the "
        "optimal horizon exponent in closed form and numerically."
    )
    label = "gamma-sweep"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            "--records",
            default=None,
            help="Fit RunRecords with virtual batch and steps instead of training.",
        )
        parser.add_argument(
            "--gammas",
            type=float_list,
            default=[0.0, 0.25, 0.5, 0.75, 1.0],
            help="Horizon exponents to train with.",
        )
        parser.add_argument(
            "--budgets",
            type=int_list,
            default=None,
            help="Token budgets to train at (default: 1, 2 and 4 times training.budget).",
        )

    def sweep(self, config, gammas, budgets):
        config = config.set("sde", "enabled", True)
        records = []
        for budget in budgets:
            for gamma in gammas:
                run = config.set("training", "budget", budget).set("sde", "gamma", gamma)
                model = build_model(run)
                logger.info("Sweep run D=%d gamma=%g", budget, gamma)
                records.append(
                    train(
                        model,
                        build_dataset(run, model.vocab),
                        hyper=build_hyper(run),
                        **train_kwargs(run),
                    )
                )
        return records

    def run(self, config, writer, **options):
        if options["records"]:
            records = read_records(options["records"])
        else:
            budget = config.training.budget
            budgets = options["budgets"] or [budget, 2 * budget, 4 * budget]
            records = self.sweep(config, options["gammas"], budgets)
            writer.write_jsonl("runs.jsonl", [record.as_dict() for record in records])
        points = [
            (record.virtual_steps, record.virtual_batch, record.final_loss)
            for record in records
            if record.virtual_steps and record.virtual_batch
        ]
        if len(points) < len(records):
            logger.warning(
                "Skipped %d runs without virtual batch/steps", len(records) - len(points)
            )
        if not points:
            raise InvalidArgument("No run carries a virtual batch and step count")
        fit = fit_drift_horizon(points, restarts=config.scaling.restarts, seed=config.run.seed)
        horizon = max(record.d_tokens for record in records)
        seq_len = records[0].seq_len
        numeric = gamma_star_numeric(fit, horizon, seq_len)
        best = {}
        for record in records:
            current = best.get(record.d_tokens)
            if current is None or record.final_loss < current.final_loss:
                best[record.d_tokens] = record
        logger.info("gamma* closed form %.4f, numeric %.4f", fit.gamma_star, numeric)
        writer.write_json(
            "gamma_sweep.json",
            {
                "fit": fit,
                "gamma_star": fit.gamma_star,
                "gamma_star_numeric": numeric,
                "horizon": horizon,
                "runs": len(points),
                "best_run_per_horizon": {
                    str(d): {"batch_size": run.batch_size, "virtual_batch": run.virtual_batch}
                    for d, run in sorted(best.items())
                },
                "reference": REFERENCE_DRIFT_HORIZON,
            },
        )
