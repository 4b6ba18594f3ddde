import logging

import numpy as np
import torch
from django.conf import settings
from django.core.signals import setting_changed
from django.utils.module_loading import import_string

from . import DEFAULT_DENOISER
from .exceptions import InvalidArgument, InvalidDenoiserError, NoSupport
from .vocab import Sequence, get_vocab, read_sequences

logger = logging.getLogger("trimask.denoisers")

# Largest corpus the exact posterior will enumerate.
MAX_CORPUS_SIZE = 10_000

# Log-probability given to ids with zero posterior mass; finite so that
# logits stay finite and losses computed from them do not turn into NaN.
LOG_ZERO = -1e30


class DenoiserManager:
    """
    Takes a settings dictionary of denoiser backends and initialises them on
    request.
    """

    def __init__(self):
        self.backends = {}
        setting_changed.connect(self._reset_backends)

    def _reset_backends(self, setting, **kwargs):
        """
        Removes cached denoisers when DENOISERS or the vocabulary changes.
        """
        if setting in ("DENOISERS", "TRIMASK_VOCAB"):
            self.backends = {}

    @property
    def configs(self):
        # Read on access; settings may be configured after import.
        return getattr(settings, "DENOISERS", {})

    def make_backend(self, name):
        config = self.configs[name].get("CONFIG", {})
        return self._make_backend(name, config)

    def make_test_backend(self, name):
        """
        Instantiate a denoiser using its test config.
        """
        try:
            config = self.configs[name]["TEST_CONFIG"]
        except KeyError:
            raise InvalidDenoiserError("No TEST_CONFIG specified for %s" % name)
        return self._make_backend(name, config)

    def _make_backend(self, name, config):
        try:
            backend_class = import_string(self.configs[name]["BACKEND"])
        except KeyError:
            raise InvalidDenoiserError("No BACKEND specified for %s" % name)
        except ImportError:
            raise InvalidDenoiserError(
                "Cannot import BACKEND %r specified for %s"
                % (self.configs[name]["BACKEND"], name)
            )
        logger.debug("Building denoiser %s from %s", name, self.configs[name]["BACKEND"])
        return backend_class(vocab=get_vocab(), **config)

    def __getitem__(self, key):
        if key not in self.backends:
            self.backends[key] = self.make_backend(key)
        return self.backends[key]

    def __contains__(self, key):
        return key in self.configs

    def set(self, key, denoiser):
        """
        Points an alias at a new denoiser and returns the one it replaced.
        Useful for swapping in a trained model or an oracle during tests.
        """
        old = self.backends.get(key, None)
        self.backends[key] = denoiser
        return old


class BaseDenoiser:
    """
    Base class for reverse-process models. Subclasses implement logits() on
    batched tensors; predict() is the single-sequence numpy view of it.
    """

    vocab = None

    def logits(self, tokens, attention_mask=None):
        """
        Maps a LongTensor of ids [B, L] (and an optional bool attention mask,
        True where a key may be attended to) to logits [B, L, |V|].
        """
        raise NotImplementedError("Subclasses of BaseDenoiser must provide logits()")

    def predict(self, tokens, attention_mask=None):
        batch = torch.as_tensor(np.asarray(tokens, dtype=np.int64)[None])
        mask = None
        if attention_mask is not None:
            mask = torch.as_tensor(np.asarray(attention_mask, dtype=bool)[None])
        with torch.no_grad():
            return self.logits(batch, mask)[0].double().cpu().numpy()

    def snapshot(self):
        """
        An immutable view that concurrent inference calls may share.
        """
        return self


def _token_array(s_t):
    tokens = getattr(s_t, "tokens", s_t)
    return np.asarray(tokens, dtype=np.int64)


def forward_logits(denoiser, s_t, attention_mask=None):
    """
    Logits [L, |V|] for one corrupted sequence. The attention mask defaults to
    the sequence's own pad exclusion.
    """
    tokens = _token_array(s_t)
    if tokens.ndim != 1:
        raise InvalidArgument("Expected a single flat sequence")
    if tokens.min() < 0 or tokens.max() >= denoiser.vocab.size:
        raise InvalidArgument(
            "Token ids must lie in [0, %d)" % denoiser.vocab.size
        )
    if attention_mask is None:
        attention_mask = getattr(s_t, "attention_mask", None)
    return denoiser.predict(tokens, attention_mask)


def _corpus_arrays(corpus, weights):
    rows = [_token_array(member) for member in corpus]
    if not rows:
        raise InvalidArgument("The corpus is empty")
    if len(rows) > MAX_CORPUS_SIZE:
        raise InvalidArgument(
            "Corpus of %d sequences is too large to enumerate (limit %d)"
            % (len(rows), MAX_CORPUS_SIZE)
        )
    if len({len(row) for row in rows}) != 1:
        raise InvalidArgument("Corpus sequences must share one length")
    if weights is None:
        weights = np.ones(len(rows))
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(rows),) or (weights < 0).any() or weights.sum() <= 0:
        raise InvalidArgument("Need one non-negative weight per corpus sequence")
    return np.stack(rows), weights / weights.sum()


def exact_posterior(corpus, s_t, vocab, weights=None):
    """
    Log of the exact conditional P(s_0^i = v | unmasked tokens of s_t) under a
    weighted corpus, found by enumerating the members that agree with every
    unmasked position of s_t. Unmasked positions put all mass on their token.
    """
    members, weights = _corpus_arrays(corpus, weights)
    tokens = _token_array(s_t)
    if tokens.shape != members.shape[1:]:
        raise InvalidArgument(
            "Sequence length %d does not match corpus length %d"
            % (len(tokens), members.shape[1])
        )
    masked = vocab.is_mask(tokens)
    consistent = (members[:, ~masked] == tokens[~masked]).all(axis=1)
    if not consistent.any():
        raise NoSupport("No corpus member is consistent with the observed tokens")
    support = members[consistent]
    mass = weights[consistent] / weights[consistent].sum()
    length = len(tokens)
    probs = np.zeros((length, vocab.size))
    positions = np.broadcast_to(np.arange(length), support.shape)
    np.add.at(probs, (positions, support), mass[:, None])
    with np.errstate(divide="ignore"):
        log_probs = np.log(probs)
    return np.where(probs > 0, log_probs, LOG_ZERO)


class ExactPosteriorDenoiser(BaseDenoiser):
    """
    The Bayes-optimal denoiser of a small corpus, used as an oracle.

    ``corpus`` is a list of Sequences or id lists, or a path to a sequence
    JSONL file.
    """

    def __init__(self, vocab, corpus, weights=None):
        self.vocab = vocab
        if isinstance(corpus, (str, bytes)) or hasattr(corpus, "__fspath__"):
            corpus = read_sequences(corpus, vocab)
        self.members, self.weights = _corpus_arrays(corpus, weights)

    @property
    def sequences(self):
        return [Sequence.from_tokens(self.vocab, row) for row in self.members]

    def predict(self, tokens, attention_mask=None):
        return exact_posterior(self.members, tokens, self.vocab, self.weights)

    def logits(self, tokens, attention_mask=None):
        rows = [self.predict(row) for row in tokens.cpu().numpy()]
        return torch.as_tensor(np.stack(rows))


denoisers = DenoiserManager()


def get_denoiser(alias=DEFAULT_DENOISER):
    """
    Returns a denoiser from the DENOISERS setting, or None if that alias is
    not configured.
    """
    try:
        return denoisers[alias]
    except KeyError:
        return None
