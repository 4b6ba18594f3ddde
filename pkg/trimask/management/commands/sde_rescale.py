from trimask.experiments import build_sde_base
from trimask.management.base import ExperimentCommand
from trimask.sde import kappa, rescale_adamw


class Command(ExperimentCommand):
    help = "Prints the AdamW tuple transferred from the [sde] base run to a new (D, B)."
    label = "sde-rescale"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--d", type=float, required=True, help="Target token horizon D.")
        parser.add_argument("--b", type=float, required=True, help="Target batch size B.")
        parser.add_argument(
            "--gamma", type=float, default=None, help="Horizon exponent (default: sde.gamma)."
        )

    def run(self, config, writer, **options):
        base = build_sde_base(config.set("sde", "enabled", True))
        gamma = config.sde.gamma if options["gamma"] is None else options["gamma"]
        factor = kappa(options["d"], options["b"], base, gamma)
        payload = {
            "d_tokens": options["d"],
            "batch_size": options["b"],
            "gamma": gamma,
            "kappa": factor,
            "base": {
                "d_tokens": base.d_tokens,
                "batch_size": base.batch_size,
                **base.adamw.as_dict(),
            },
            "adamw": rescale_adamw(base, factor),
            "virtual_batch": options["b"] / factor,
        }
        self.emit(payload)
        writer.write_json("sde_rescale.json", payload)
