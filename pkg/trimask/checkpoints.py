"""
Model checkpoints: a torch archive holding a JSON header (format version,
model config, vocabulary, parameter shapes and group tags) next to the
state dict. Loading uses ``weights_only`` so no pickled code is executed.
"""

import json
import logging
import pickle

import torch

from .exceptions import InvalidArgument, InvalidDenoiserError
from .transformer import ToyTransformer, ToyTransformerConfig
from .vocab import UnifiedVocab

logger = logging.getLogger("trimask.checkpoints")

CHECKPOINT_FORMAT = "trimask-checkpoint"
CHECKPOINT_VERSION = 1


def checkpoint_header(model, **extra):
    groups = model.parameter_groups()
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.as_dict(),
        "vocab": model.vocab.to_json(),
        "multipliers": model.multipliers.name,
        "shapes": {
            name: list(parameter.shape) for name, parameter in model.named_parameters()
        },
        "groups": {name: group.name for name, group in groups.items()},
        "extra": extra,
    }


def save_checkpoint(path, model, **extra):
    header = checkpoint_header(model, **extra)
    torch.save(
        {
            "header": json.dumps(header, sort_keys=True),
            "tensors": {key: value.detach().cpu() for key, value in model.state_dict().items()},
        },
        path,
    )
    logger.info("Wrote checkpoint %s", path)
    return header


def read_header(path):
    try:
        archive = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise InvalidArgument("No checkpoint at %s" % path)
    except (RuntimeError, pickle.UnpicklingError, EOFError):
        raise InvalidArgument("%s is not a checkpoint" % path)
    try:
        header = json.loads(archive["header"])
    except (KeyError, TypeError, ValueError):
        raise InvalidArgument("%s is not a checkpoint" % path)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise InvalidArgument("%s is not a checkpoint" % path)
    if header.get("version") != CHECKPOINT_VERSION:
        raise InvalidArgument(
            "Unsupported checkpoint version %r in %s" % (header.get("version"), path)
        )
    return header, archive["tensors"]


def load_checkpoint(path):
    """
    Returns (model, header) for a saved ToyTransformer.
    """
    header, tensors = read_header(path)
    vocab = UnifiedVocab.from_json(header["vocab"])
    config = ToyTransformerConfig(**header["config"])
    model = ToyTransformer(vocab, config, multipliers=header["multipliers"])
    model.load_state_dict(tensors)
    return model.eval(), header


def load_denoiser(vocab, path):
    """
    DENOISERS backend: ``{"BACKEND": "trimask.checkpoints.load_denoiser",
    "CONFIG": {"path": ...}}``.
    """
    model, header = load_checkpoint(path)
    if model.vocab != vocab:
        raise InvalidDenoiserError(
            "Checkpoint %s was trained on %r, not the configured %r"
            % (path, model.vocab, vocab)
        )
    return model
