import json
import logging

import numpy as np

from trimask.exceptions import InvalidArgument
from trimask.management.base import ExperimentCommand, float_list
from trimask.scaling import (
    REFERENCE_TRIMODAL_FIT,
    FlopsModel,
    ScalingFit,
    compute_table,
    d_star_coefficient,
    frontier_table,
    iso_curves,
    iso_flops,
)
from trimask.vocab import get_vocab

logger = logging.getLogger("trimask.commands")


def log_slope(x, y):
    """
    Least-squares slope of log y against log x.
    """
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


class Command(ExperimentCommand):
    help = "Derives compute-optimal frontiers and iso tables from a scaling fit."
    label = "frontier"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--fit", required=True, help="scaling_fit.json from fit-scaling.")
        parser.add_argument(
            "--n-grid",
            type=float_list,
            dest="n_grid",
            default=list(np.logspace(-4, 2, 25)),
            help="Non-embedding parameter counts, in billions.",
        )
        parser.add_argument(
            "--budgets",
            type=float_list,
            default=list(np.logspace(15, 24, 10)),
            help="Training FLOPs budgets.",
        )
        parser.add_argument(
            "--levels",
            type=float_list,
            default=None,
            help="Loss levels for the isoloss table (default: spread above E).",
        )

    def load_fit(self, path):
        try:
            with open(path) as handle:
                data = json.load(handle)
            return ScalingFit.from_dict(data.get("fit", data))
        except (KeyError, TypeError, ValueError) as error:
            raise InvalidArgument("%s holds no scaling fit (%s)" % (path, error))

    def flops_model(self, config):
        return FlopsModel(
            config.scaling.flops,
            vocab_size=len(get_vocab()),
            seq_len=config.sequence.length,
            rho=config.scaling.rho,
            mlp_factor=config.model.mlp_factor,
        )

    def run(self, config, writer, **options):
        fit = self.load_fit(options["fit"])
        model = self.flops_model(config)
        n_grid = np.asarray(options["n_grid"], dtype=float)
        summary = {"fit": fit, "flops": model, "reference": REFERENCE_TRIMODAL_FIT}

        if fit.form == "kaplan":
            frontier = frontier_table(fit, n_grid)
            writer.write_csv("frontier.csv", frontier)
            summary["d_star_coefficient"] = d_star_coefficient(fit)
            summary["d_star_exponent"] = log_slope(frontier["n"], frontier["d_star"])
        else:
            logger.info("No closed-form D*(N) for the %s form; skipping frontier.csv", fit.form)

        compute = compute_table(fit, options["budgets"], model)
        writer.write_csv("compute.csv", compute)
        if len(compute) > 1:
            summary["n_star_compute_exponent"] = log_slope(compute["flops"], compute["n_star"])
            summary["d_star_compute_exponent"] = log_slope(compute["flops"], compute["d_star"])

        levels = options["levels"]
        if levels is None:
            top = float(np.max(fit.predict(n_grid.min(), n_grid.min())))
            levels = list(np.linspace(fit.E, top, 7)[1:])
        isoloss = iso_curves(fit, levels, n_grid)
        writer.write_csv("isoloss.csv", isoloss)
        summary["empty_levels"] = isoloss.attrs["empty_levels"]
        writer.write_csv("isoflops.csv", iso_flops(fit, options["budgets"], n_grid, model))
        writer.write_json("frontier.json", summary)
