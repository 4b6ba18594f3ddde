"""
Per-module AdamW and initialisation multipliers.

Every parameter tensor belongs to one ParamGroup. Parameters inside the
repeated blocks get the product of a module-type factor and a depth factor;
standalone parameters (embeddings, unembeddings, the final norm) get their
module factor only.
"""

from dataclasses import dataclass, fields

from .exceptions import InvalidArgument

SHALLOW = "0-50"
DEEP = "50-100"
DEPTH_BUCKETS = (SHALLOW, DEEP)

STANDALONE_MODULES = (
    "embedding.text",
    "embedding.image",
    "embedding.audio",
    "unembedding.text",
    "unembedding.image",
    "unembedding.audio",
    "unembedding_norm",
)
BLOCK_MODULES = (
    "attn_qkv",
    "attn_proj",
    "attn_q_norm",
    "attn_k_norm",
    "mlp_gate",
    "mlp_fc1",
    "mlp_fc2",
    "norm1",
    "norm2",
)
MODULES = STANDALONE_MODULES + BLOCK_MODULES


@dataclass(frozen=True)
class ParamGroup:
    module: str
    depth: str = None

    def __post_init__(self):
        if self.module not in MODULES:
            raise InvalidArgument("Unknown module class %r" % self.module)
        if (self.module in BLOCK_MODULES) != (self.depth is not None):
            raise InvalidArgument("Only block modules carry a depth bucket")
        if self.depth is not None and self.depth not in DEPTH_BUCKETS:
            raise InvalidArgument("Unknown depth bucket %r" % self.depth)

    @property
    def name(self):
        if self.depth is None:
            return self.module
        return "%s@%s" % (self.module, self.depth)

    @property
    def is_embedding(self):
        return self.module.startswith("embedding.") or self.module.startswith(
            "unembedding."
        )


def depth_bucket(block_index, n_layers):
    """
    Depth bucket of a block, counted from the input towards the output.
    """
    return SHALLOW if block_index / n_layers < 0.5 else DEEP


@dataclass(frozen=True)
class Multiplier:
    lr: float = 1.0
    wd: float = 1.0
    alpha1: float = 1.0
    alpha2: float = 1.0
    eps: float = 1.0
    init: float = 1.0

    def __post_init__(self):
        for field in fields(self):
            if not getattr(self, field.name) > 0:
                raise InvalidArgument("Multiplier %s must be positive" % field.name)

    def __mul__(self, other):
        return Multiplier(
            **{
                field.name: getattr(self, field.name) * getattr(other, field.name)
                for field in fields(self)
            }
        )


UNIT = Multiplier()

# Multipliers found by a per-module search at small scale (lr, wd, alpha1,
# alpha2, eps, init).
PER_MODULE_MULTIPLIERS = {
    "embedding.audio": Multiplier(2.192, 1.009, 0.962, 1.493, 1.494, 1.826),
    "embedding.image": Multiplier(1.013, 0.864, 2.108, 0.685, 0.734, 0.554),
    "embedding.text": Multiplier(3.937, 1.593, 1.421, 1.791, 0.317, 0.379),
    "unembedding.audio": Multiplier(1.633, 1.510, 3.442, 0.594, 0.742, 3.422),
    "unembedding.image": Multiplier(1.655, 1.213, 1.929, 1.042, 0.635, 1.524),
    "unembedding.text": Multiplier(3.008, 0.737, 1.346, 0.955, 1.206, 0.341),
    "unembedding_norm": Multiplier(2.305, 0.817, 4.508, 2.740, 1.938, 2.175),
    "attn_qkv": Multiplier(1.714, 0.821, 0.173, 0.557, 0.391, 2.498),
    "attn_proj": Multiplier(0.630, 0.354, 0.256, 0.339, 1.627, 4.732),
    "attn_q_norm": Multiplier(0.535, 0.731, 1.530, 0.902, 0.848, 1.344),
    "attn_k_norm": Multiplier(0.754, 0.497, 1.074, 0.822, 0.368, 0.436),
    "mlp_gate": Multiplier(0.489, 0.634, 1.171, 1.870, 4.913, 0.643),
    "mlp_fc1": Multiplier(1.271, 1.295, 1.590, 3.309, 1.415, 1.944),
    "mlp_fc2": Multiplier(1.405, 1.308, 2.684, 0.655, 1.790, 0.878),
    "norm1": Multiplier(1.311, 1.105, 0.282, 1.161, 1.477, 2.171),
    "norm2": Multiplier(0.899, 0.525, 1.533, 1.789, 0.712, 1.189),
}
PER_MODULE_DEPTH_FACTORS = {
    SHALLOW: Multiplier(1.102, 0.725, 1.030, 3.053, 0.663, 0.997),
    DEEP: Multiplier(0.877, 1.018, 0.911, 1.149, 2.645, 0.485),
}


class MultiplierTable:
    """
    Resolves the effective multiplier of a ParamGroup.
    """

    def __init__(self, modules=None, depth_factors=None, name="custom"):
        self.modules = dict(modules or {})
        self.depth_factors = dict(depth_factors or {})
        self.name = name
        unknown = set(self.modules) - set(MODULES)
        if unknown:
            raise InvalidArgument("Unknown module classes %s" % sorted(unknown))

    def for_group(self, group):
        multiplier = self.modules.get(group.module, UNIT)
        if group.depth is not None:
            multiplier = multiplier * self.depth_factors.get(group.depth, UNIT)
        return multiplier

    @classmethod
    def unit(cls):
        return cls(name="unit")

    @classmethod
    def per_module(cls):
        return cls(PER_MODULE_MULTIPLIERS, PER_MODULE_DEPTH_FACTORS, name="per-module")


MULTIPLIER_PRESETS = {
    "unit": MultiplierTable.unit,
    "per-module": MultiplierTable.per_module,
}


def get_multipliers(name):
    if isinstance(name, MultiplierTable):
        return name
    try:
        return MULTIPLIER_PRESETS[name]()
    except KeyError:
        raise InvalidArgument(
            "Unknown multiplier preset %r (expected one of %s)"
            % (name, ", ".join(MULTIPLIER_PRESETS))
        )
