import logging

import numpy as np

from trimask.exceptions import InvalidConfig
from trimask.forward import anti_mask_pair, corrupt
from trimask.management.base import ExperimentCommand, float_list
from trimask.schedules import parse_schedule
from trimask.training import view_weight
from trimask.vocab import get_vocab, read_sequences

logger = logging.getLogger("trimask.commands")


class Command(ExperimentCommand):
    help = "Writes corrupted views of a sequence file across a grid of diffusion times."
    label = "corrupt"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--input", required=True, help="Sequence JSONL file.")
        parser.add_argument(
            "--times",
            type=float_list,
            default=[0.1, 0.25, 0.5, 0.75, 1.0],
            help="Comma-separated diffusion times in (0, 1].",
        )
        parser.add_argument(
            "--anti-mask",
            action="store_true",
            dest="anti_mask",
            help="Also emit the complementary view of every draw.",
        )

    def run(self, config, writer, **options):
        if not options["times"]:
            raise InvalidConfig("--times needs at least one value")
        sequences = read_sequences(
            options["input"],
            get_vocab(),
            boundaries_maskable=config.sequence.boundaries_maskable,
        )
        schedule = parse_schedule(config.training.schedule)
        floor = config.training.time_floor
        rng = np.random.default_rng(config.run.seed)
        rows = []
        for index, sequence in enumerate(sequences):
            for t in options["times"]:
                if options["anti_mask"]:
                    views = anti_mask_pair(sequence, t, schedule, rng)
                else:
                    views = (corrupt(sequence, t, schedule, rng),)
                for number, view in enumerate(views):
                    weight = view_weight(view, schedule, floor) if view.num_masked else 0.0
                    rows.append(
                        {
                            "index": index,
                            "view": number,
                            "t": view.t,
                            "tokens": view.tokens.tolist(),
                            "masked": view.masked_positions.tolist(),
                            "weight": weight,
                        }
                    )
        logger.info("Corrupted %d sequences at %d times", len(sequences), len(options["times"]))
        writer.write_jsonl("corrupted.jsonl", rows)
