"""
Experiment configuration files.

An experiment file is ``key = value`` text under ``[section]`` headers. Every
key has a desk-scale default; unknown sections and keys are rejected.
"""

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

from .exceptions import InvalidConfig
from .vocab import DEFAULT_SEQUENCE_LENGTH, FULL_SEQUENCE_LENGTH


@dataclass
class VocabSection:
    text: int = 32
    image: int = 16
    audio: int = 16


@dataclass
class SequenceSection:
    length: int = DEFAULT_SEQUENCE_LENGTH
    boundaries_maskable: bool = False
    p_subsample: float = 0.05


@dataclass
class ModelSection:
    n_layers: int = 2
    d_emb: int = 64
    n_heads: int = 4
    mlp_factor: float = 2.75
    rope_base: float = 10000.0
    qk_norm: bool = True
    use_rope: bool = True
    init_std: float = 0.02
    multipliers: str = "unit"


@dataclass
class OptimizerSection:
    lr: float = 9e-4
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    warmup_steps: int = 1000
    warmup_fraction: float = 0.25
    lr_schedule: str = "cosine"
    min_lr: float = 1e-6


@dataclass
class TrainingSection:
    budget: int = 262144
    batch_size: int = 16
    schedule: str = "linear"
    anti_mask: bool = False
    epochs: int = 1
    z_loss: float = 1e-5
    time_floor: float = 1e-3
    grad_accum: int = 1
    shuffle: bool = True
    log_every: int = 50


@dataclass
class DataSection:
    samples: str = ""
    validation: str = ""
    w_text: float = 1 / 3
    w_image: float = 1 / 3
    w_audio: float = 1 / 3
    min_weight: float = 0.0


@dataclass
class SamplerSection:
    preset: str = ""
    steps: int = 16
    cfg_scale: float = 1.0
    temperature: float = 1.0
    top_p: float = 1.0
    schedule: str = "linear"
    reveal: str = "confidence"


@dataclass
class SdeSection:
    enabled: bool = False
    d_base: float = 262144.0
    b_base: float = 16.0
    gamma: float = 0.0


@dataclass
class ScalingSection:
    form: str = "kaplan"
    restarts: int = 64
    bootstrap: int = 20
    flops: str = "six_n"
    rho: float = 128.0


@dataclass
class RunSection:
    seed: int = 0
    output: str = ""


SECTIONS = {
    "vocab": VocabSection,
    "sequence": SequenceSection,
    "model": ModelSection,
    "optimizer": OptimizerSection,
    "training": TrainingSection,
    "data": DataSection,
    "sampler": SamplerSection,
    "sde": SdeSection,
    "scaling": ScalingSection,
    "run": RunSection,
}


def _coerce(kind, raw, where):
    if not isinstance(raw, str):
        raw = str(raw)
    raw = raw.strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(raw)
            return configparser.ConfigParser.BOOLEAN_STATES[lowered]
        if kind is int:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise InvalidConfig("Bad %s value %r for %s" % (kind.__name__, raw, where))
    return raw


@dataclass
class ExperimentConfig:
    vocab: VocabSection = field(default_factory=VocabSection)
    sequence: SequenceSection = field(default_factory=SequenceSection)
    model: ModelSection = field(default_factory=ModelSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    data: DataSection = field(default_factory=DataSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    sde: SdeSection = field(default_factory=SdeSection)
    scaling: ScalingSection = field(default_factory=ScalingSection)
    run: RunSection = field(default_factory=RunSection)

    @classmethod
    def preset(cls, name="desk"):
        try:
            return PRESETS[name]()
        except KeyError:
            raise InvalidConfig(
                "Unknown preset %r (expected one of %s)" % (name, ", ".join(PRESETS))
            )

    @classmethod
    def from_file(cls, path, base=None):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as handle:
                parser.read_file(handle)
        except OSError as error:
            raise InvalidConfig("Cannot read %s: %s" % (path, error.strerror))
        except configparser.Error as error:
            raise InvalidConfig("Cannot parse %s: %s" % (path, error))
        config = base or cls()
        preset = parser.defaults().get("preset")
        if preset is not None:
            config = cls.preset(preset)
        for section in parser.sections():
            for key, value in parser.items(section, raw=True):
                if key == "preset" and key in parser.defaults():
                    continue
                config = config.set(section, key, value)
        return config

    def set(self, section, key, value):
        """
        A copy with one value replaced, coerced to the field's type.
        """
        try:
            current = getattr(self, section)
        except AttributeError:
            current = None
        if section not in SECTIONS or current is None:
            raise InvalidConfig("Unknown section [%s]" % section)
        types = {item.name: item.type for item in fields(current)}
        if key not in types:
            raise InvalidConfig("Unknown key %r in [%s]" % (key, section))
        coerced = _coerce(types[key], value, "%s.%s" % (section, key))
        return replace(self, **{section: replace(current, **{key: coerced})})

    def override(self, assignments):
        """
        Applies ``section.key=value`` strings in order.
        """
        config = self
        for assignment in assignments:
            target, sep, value = assignment.partition("=")
            section, dot, key = target.strip().partition(".")
            if not sep or not dot:
                raise InvalidConfig("Overrides look like section.key=value, got %r" % assignment)
            config = config.set(section, key.strip(), value)
        return config

    def as_dict(self):
        return asdict(self)

    def as_settings(self):
        """
        The Django settings an experiment runs under.
        """
        return {"TRIMASK_VOCAB": asdict(self.vocab)}

    @property
    def hash(self):
        canonical = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @property
    def mixture(self):
        return {
            "text": self.data.w_text,
            "image-text": self.data.w_image,
            "audio-text": self.data.w_audio,
        }


def _full_preset():
    config = ExperimentConfig()
    for section, values in {
        "sequence": {"length": FULL_SEQUENCE_LENGTH},
        "model": {"n_layers": 24, "d_emb": 3072, "n_heads": 24},
        "optimizer": {"warmup_steps": 2000},
        "training": {"batch_size": 3072, "budget": 3072 * 3256 * 1_000_000},
        "data": {"min_weight": 0.2},
        "sde": {"d_base": 13e9, "b_base": 256.0},
    }.items():
        for key, value in values.items():
            config = config.set(section, key, value)
    return config


PRESETS = {
    "desk": ExperimentConfig,
    "full": _full_preset,
}
