"""
Run records: one JSON object per training run, appended to a JSONL log, and
the tabular views the scaling fits read.
"""

import json
import math
from dataclasses import asdict, dataclass, fields

import pandas as pd

from .exceptions import InvalidArgument


@dataclass
class RunRecord:
    n_nonembed: int
    n_total: int
    d_tokens: int
    batch_size: int
    seq_len: int
    steps: int
    final_loss: float
    seed: int = 0
    schedule: str = "linear"
    anti_mask: bool = False
    epochs: int = 1
    virtual_batch: float = None
    virtual_steps: float = None
    config_hash: str = None

    def __post_init__(self):
        if self.d_tokens != self.batch_size * self.steps * self.seq_len:
            raise InvalidArgument(
                "Token count %d is not B*S*L = %d*%d*%d"
                % (self.d_tokens, self.batch_size, self.steps, self.seq_len)
            )
        if not math.isfinite(self.final_loss):
            raise InvalidArgument("Run records need a finite loss")

    def as_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {field.name for field in fields(cls)}
        return cls(**{key: value for key, value in data.items() if key in known})


def append_record(path, record):
    with open(path, "a") as handle:
        handle.write(json.dumps(record.as_dict(), sort_keys=True) + "\n")


def read_records(path):
    records = []
    with open(path) as handle:
        for number, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                records.append(RunRecord.from_dict(json.loads(line)))
            except (TypeError, ValueError) as error:
                raise InvalidArgument("%s:%d: %s" % (path, number, error))
    return records


def records_frame(records):
    return pd.DataFrame([record.as_dict() for record in records])


# Columns a scaling fit needs, under the names the CSV may use for them.
_COLUMN_ALIASES = {
    "n": ("n", "n_nonembed", "N"),
    "d": ("d", "d_tokens", "D"),
    "loss": ("loss", "final_loss", "L"),
}


def scaling_frame(source):
    """
    Reads (N, D, loss) triples from a RunRecord JSONL log, a CSV file or a
    list of RunRecords into a frame with columns ``n``, ``d`` and ``loss``.
    """
    if isinstance(source, pd.DataFrame):
        frame = source
    elif isinstance(source, (list, tuple)):
        frame = records_frame(source)
    elif str(source).endswith(".csv"):
        frame = pd.read_csv(source)
    else:
        frame = records_frame(read_records(source))
    columns = {}
    for target, aliases in _COLUMN_ALIASES.items():
        for alias in aliases:
            if alias in frame.columns:
                columns[target] = frame[alias].astype(float)
                break
        else:
            raise InvalidArgument("Scaling data has no %s column" % target)
    return pd.DataFrame(columns)
