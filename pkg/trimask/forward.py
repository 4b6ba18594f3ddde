"""
The forward (corruption) process: Bernoulli masking under a schedule, the
reversal posterior and the ELBO weight.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidArgument
from .schedules import LinearSchedule

# Lower end of the training time distribution t ~ U(eps, 1).
DEFAULT_TIME_FLOOR = 1e-3


@dataclass(frozen=True, eq=False)
class CorruptedSequence:
    base: object
    t: float
    masked: np.ndarray
    tokens: np.ndarray

    def __post_init__(self):
        self.masked.setflags(write=False)
        self.tokens.setflags(write=False)

    @property
    def masked_positions(self):
        return np.flatnonzero(self.masked)

    @property
    def num_masked(self):
        return int(self.masked.sum())

    @property
    def attention_mask(self):
        return self.base.attention_mask


def _check_time(t):
    t = float(t)
    if not 0.0 < t <= 1.0:
        raise InvalidArgument("Diffusion time must lie in (0, 1], got %r" % t)
    return t


def mask_from_uniforms(sequence, t, schedule, uniforms):
    """
    Corrupts with caller-supplied per-position uniforms. Sharing the uniforms
    across times gives the monotone coupling: I_t is a subset of I_t' for t < t'.
    """
    t = _check_time(t)
    uniforms = np.asarray(uniforms, dtype=float)
    if uniforms.shape != sequence.tokens.shape:
        raise InvalidArgument("Expected one uniform per position")
    masked = sequence.maskable & (uniforms < float(schedule.mask_fraction(t)))
    return _apply_mask(sequence, t, masked)


def _apply_mask(sequence, t, masked):
    tokens = np.where(masked, sequence.mask_tokens, sequence.tokens)
    return CorruptedSequence(sequence, t, masked, tokens)


def corrupt(sequence, t, schedule=None, rng=None):
    """
    Masks every maskable position independently with probability 1 - alpha_bar(t),
    each with its own modality's MASK token.
    """
    schedule = schedule or LinearSchedule()
    rng = np.random.default_rng(rng)
    return mask_from_uniforms(
        sequence, t, schedule, rng.random(len(sequence.tokens))
    )


def complementary_time(t, schedule):
    """
    The time whose mask fraction equals 1 - m(t).
    """
    return float(schedule.inverse(1.0 - float(schedule.mask_fraction(t))))


def anti_mask_pair(sequence, t, schedule=None, rng=None):
    """
    A corrupt() draw and its complement on the maskable set. The complement
    carries its own diffusion time so that its ELBO weight matches its mask
    fraction.
    """
    schedule = schedule or LinearSchedule()
    first = corrupt(sequence, t, schedule, rng)
    complement = sequence.maskable & ~first.masked
    second = _apply_mask(sequence, complementary_time(first.t, schedule), complement)
    return first, second


def posterior_pi(t, dt, schedule=None):
    """
    Probability that a token masked at time t was masked during the last
    step of size dt: (alpha_bar(t - dt) - alpha_bar(t)) / (1 - alpha_bar(t)).
    """
    schedule = schedule or LinearSchedule()
    t = _check_time(t)
    previous = t - float(dt)
    if dt <= 0 or previous < -1e-12:
        raise InvalidArgument("Need 0 <= t - dt < t, got t=%r dt=%r" % (t, dt))
    previous = max(previous, 0.0)
    masked = float(schedule.mask_fraction(t))
    if masked <= 0.0:
        raise InvalidArgument("Nothing is masked at t=%r" % t)
    return (masked - float(schedule.mask_fraction(previous))) / masked


def posterior_rate(t, schedule=None):
    """
    Continuous-time limit of posterior_pi: -alpha_bar'(t) / (1 - alpha_bar(t)).
    """
    schedule = schedule or LinearSchedule()
    t = _check_time(t)
    return float(schedule.mask_rate(t)) / float(schedule.mask_fraction(t))


def elbo_weight(t, schedule=None, floor=DEFAULT_TIME_FLOOR):
    """
    |alpha_bar'(t)| / (1 - alpha_bar(t)); exactly 1/t for the linear schedule.
    """
    schedule = schedule or LinearSchedule()
    t = float(t)
    if not floor < t <= 1.0:
        raise InvalidArgument("ELBO weight needs t in (%g, 1], got %r" % (floor, t))
    return abs(float(schedule.mask_rate(t))) / float(schedule.mask_fraction(t))


def sample_time(rng, floor=DEFAULT_TIME_FLOOR):
    """
    Draws t ~ U(floor, 1).
    """
    return float(rng.uniform(floor, 1.0))
