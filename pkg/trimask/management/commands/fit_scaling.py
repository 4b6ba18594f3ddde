from trimask.management.base import ExperimentCommand
from trimask.scaling import REFERENCE_TRIMODAL_FIT, d_star_coefficient, fit_power_law


class Command(ExperimentCommand):
    help = "Fits the scaling law L(N, D) to a set of training runs."
    label = "fit-scaling"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            "--records", required=True, help="RunRecord JSONL log or CSV with N, D and loss."
        )
        parser.add_argument(
            "--form",
            default=None,
            choices=["kaplan", "additive"],
            help="Law form (default: scaling.form).",
        )
        parser.add_argument(
            "--compare-additive",
            action="store_true",
            dest="compare_additive",
            help="Also fit the additive form on the same runs.",
        )

    def fit(self, config, records, form):
        return fit_power_law(
            records,
            form=form,
            restarts=config.scaling.restarts,
            bootstrap_k=config.scaling.bootstrap,
            seed=config.run.seed,
        )

    def run(self, config, writer, **options):
        form = options["form"] or config.scaling.form
        fit = self.fit(config, options["records"], form)
        payload = {"fit": fit, "reference": REFERENCE_TRIMODAL_FIT}
        if fit.form == "kaplan":
            payload["frontier"] = {
                "d_star_coefficient": d_star_coefficient(fit),
                "d_star_exponent": fit.alpha_frontier,
            }
        if options["compare_additive"] and form != "additive":
            payload["additive"] = self.fit(config, options["records"], "additive")
        writer.write_json("scaling_fit.json", payload)
