import logging

from trimask.exceptions import InvalidArgument
from trimask.management.base import ExperimentCommand
from trimask.records import read_records
from trimask.sde import estimate_s_crit

logger = logging.getLogger("trimask.commands")


class Command(ExperimentCommand):
    help = "Estimates the critical step count and batch size from runs at a fixed (N, D)."
    label = "bcrit-scan"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--records", required=True, help="RunRecord JSONL log.")
        parser.add_argument(
            "--n", type=int, default=None, help="Keep runs with this non-embedding N."
        )
        parser.add_argument("--d", type=int, default=None, help="Keep runs with this D.")
        parser.add_argument(
            "--delta", type=float, default=0.01, help="Relative tolerance around the plateau."
        )

    def run(self, config, writer, **options):
        records = read_records(options["records"])
        if options["n"] is not None:
            records = [record for record in records if record.n_nonembed == options["n"]]
        if options["d"] is not None:
            records = [record for record in records if record.d_tokens == options["d"]]
        if not records:
            raise InvalidArgument("No runs match the requested (N, D)")
        shapes = {(record.n_nonembed, record.d_tokens, record.seq_len) for record in records}
        if len(shapes) != 1:
            raise InvalidArgument(
                "Runs mix %d (N, D, L) combinations; select one with --n and --d" % len(shapes)
            )
        n, d, length = shapes.pop()
        estimate = estimate_s_crit(
            [(record.steps, record.final_loss) for record in records],
            options["delta"],
            seq_len=length,
            d_tokens=d,
        )
        logger.info("S_crit=%g B_crit=%g at N=%d D=%d", estimate.s_crit, estimate.b_crit, n, d)
        writer.write_json(
            "bcrit.json",
            {
                "n_nonembed": n,
                "d_tokens": d,
                "delta": options["delta"],
                "runs": len(records),
                "estimate": estimate,
            },
        )
