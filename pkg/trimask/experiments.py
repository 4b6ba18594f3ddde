"""
Builders turning an ExperimentConfig into the objects the commands run.
"""

from dataclasses import asdict

from .data import MixtureDataset, load_samples
from .exceptions import InvalidConfig
from .optim import AdamWHyper
from .sampler import SamplerConfig, get_preset
from .sde import AdamWTuple, SdeBase
from .transformer import ToyTransformer, ToyTransformerConfig
from .vocab import get_vocab, read_sequences


def build_model(config, vocab=None, seed=None):
    options = asdict(config.model)
    multipliers = options.pop("multipliers")
    return ToyTransformer(
        vocab or get_vocab(),
        ToyTransformerConfig(**options),
        multipliers=multipliers,
        seed=config.run.seed if seed is None else seed,
    )


def build_hyper(config):
    return AdamWHyper(multipliers=config.model.multipliers, **asdict(config.optimizer))


def build_dataset(config, vocab=None):
    if not config.data.samples:
        raise InvalidConfig("Set data.samples to a sample JSONL file")
    vocab = vocab or get_vocab()
    categories = load_samples(
        config.data.samples,
        vocab,
        config.sequence.length,
        config.sequence.p_subsample,
        boundaries_maskable=config.sequence.boundaries_maskable,
    )
    present = {task.value for task in categories}
    weights = {task: weight for task, weight in config.mixture.items() if task in present}
    total = sum(weights.values())
    if total <= 0:
        raise InvalidConfig("The mixture puts no weight on the available samples")
    # Renormalise over the categories the sample file actually holds.
    weights = {task: weight / total for task, weight in weights.items()}
    return MixtureDataset(categories, weights, config.data.min_weight or None)


def build_validation(config, vocab=None):
    if not config.data.validation:
        return None
    return read_sequences(
        config.data.validation,
        vocab or get_vocab(),
        boundaries_maskable=config.sequence.boundaries_maskable,
    )


def build_sde_base(config):
    if not config.sde.enabled:
        return None
    optimizer = config.optimizer
    return SdeBase(
        config.sde.d_base,
        config.sde.b_base,
        AdamWTuple(optimizer.lr, optimizer.beta1, optimizer.beta2, optimizer.eps),
    )


def build_sampler_config(config, preset=None):
    preset = preset or config.sampler.preset
    if preset:
        return get_preset(preset).replace(steps=config.sampler.steps)
    options = asdict(config.sampler)
    options.pop("preset")
    return SamplerConfig(**options)


def train_kwargs(config):
    training = config.training
    return {
        "budget": training.budget,
        "batch_size": training.batch_size,
        "schedule": training.schedule,
        "anti_mask": training.anti_mask,
        "epochs": training.epochs,
        "seed": config.run.seed,
        "shuffle": training.shuffle,
        "z_loss": training.z_loss,
        "time_floor": training.time_floor,
        "grad_accum": training.grad_accum,
        "sde_base": build_sde_base(config),
        "sde_gamma": config.sde.gamma,
        "config_hash": config.hash,
        "log_every": training.log_every,
    }
