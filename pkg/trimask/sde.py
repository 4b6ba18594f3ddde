"""
Batch-size transfer under the SDE view of AdamW.

A base run (token horizon D_base, batch B_base, AdamW tuple) is moved to a new
(D, B) through the factor kappa = (D_base / D)^gamma * (B / B_base), which
rescales lr by sqrt(kappa), each beta to the power kappa and eps by
1 / sqrt(kappa). The virtual batch and step count describe the equivalent run
without the reparameterisation.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .exceptions import ConvergenceError, InvalidArgument, NotFound
from .fitting import AdditiveForm, fit_law
from .optim import AdamWHyper

logger = logging.getLogger("trimask.sde")

# Published drift/horizon exponents.
REFERENCE_DRIFT_HORIZON = {"alpha": 0.18, "beta": 0.23, "gamma_star": 0.44}


@dataclass(frozen=True)
class AdamWTuple:
    lr: float
    beta1: float
    beta2: float
    eps: float

    @classmethod
    def from_hyper(cls, hyper):
        return cls(hyper.lr, hyper.beta1, hyper.beta2, hyper.eps)

    def apply(self, hyper):
        """
        The AdamWHyper with this tuple substituted for its base values.
        """
        return hyper.replace(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def as_dict(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


@dataclass(frozen=True)
class SdeBase:
    d_tokens: float
    batch_size: float
    adamw: AdamWTuple = AdamWTuple(9e-4, 0.9, 0.95, 1e-8)

    def __post_init__(self):
        if not (self.d_tokens > 0 and self.batch_size > 0):
            raise InvalidArgument("The SDE base needs a positive horizon and batch")
        adamw = self.adamw
        if not (adamw.lr > 0 and adamw.eps > 0):
            raise InvalidArgument("The base lr and eps must be positive")
        if not (0 < adamw.beta1 < 1 and 0 < adamw.beta2 < 1):
            raise InvalidArgument("The base betas must lie in (0, 1)")


def kappa(d_tokens, batch_size, base, gamma):
    """
    The SDE scaling factor (D_base / D)^gamma * (B / B_base).
    """
    if not (d_tokens > 0 and batch_size > 0):
        raise InvalidArgument("kappa needs a positive horizon and batch size")
    if not 0 <= gamma <= 1:
        raise InvalidArgument("gamma must lie in [0, 1], got %r" % gamma)
    return (base.d_tokens / d_tokens) ** gamma * (batch_size / base.batch_size)


def rescale_adamw(base, factor):
    """
    Rescales an AdamW tuple (or the tuple of an SdeBase or AdamWHyper) by
    kappa. ``factor == 1`` returns the input values unchanged.
    """
    if not factor > 0:
        raise InvalidArgument("kappa must be positive")
    if isinstance(base, SdeBase):
        base = base.adamw
    elif isinstance(base, AdamWHyper):
        base = AdamWTuple.from_hyper(base)
    if factor == 1:
        return base
    root = math.sqrt(factor)
    return AdamWTuple(
        lr=base.lr * root,
        beta1=base.beta1**factor,
        beta2=base.beta2**factor,
        eps=base.eps / root,
    )


@dataclass(frozen=True)
class DriftHorizonFit:
    """
    Loss model E + A * S~^(-alpha) + B * B~^(-beta) over virtual steps S~ and
    virtual batch B~.
    """

    E: float
    A: float
    B: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.A > 0 and self.B > 0):
            raise InvalidArgument("Drift/horizon coefficients must be positive")

    @property
    def gamma_star(self):
        return self.alpha / (self.alpha + self.beta)

    @property
    def G(self):
        return (self.alpha * self.A / (self.beta * self.B)) ** (1 / (self.alpha + self.beta))

    def predict(self, virtual_steps, virtual_batch):
        return (
            self.E
            + self.A * np.asarray(virtual_steps, dtype=float) ** -self.alpha
            + self.B * np.asarray(virtual_batch, dtype=float) ** -self.beta
        )

    def as_dict(self):
        return {
            "E": self.E,
            "A": self.A,
            "B": self.B,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma_star": self.gamma_star,
            "G": self.G,
        }


def virtual_split(d_tokens, seq_len, fit, gamma=None):
    """
    Returns (S~, B~) = (G n^(1-gamma), n^gamma / G) with n = D / L, so that
    S~ * B~ * L = D. ``gamma`` defaults to the fit's gamma*.
    """
    gamma = fit.gamma_star if gamma is None else gamma
    n = d_tokens / seq_len
    G = fit.G
    return G * n ** (1 - gamma), n**gamma / G


def _optimal_log_batch(fit, n, trace):
    log_n = math.log(n)
    log_a, log_b = math.log(fit.A), math.log(fit.B)

    def log_excess(log_batch):
        value = np.logaddexp(
            log_a - fit.alpha * (log_n - log_batch), log_b - fit.beta * log_batch
        )
        trace.append((float(log_batch), float(value)))
        return value

    low, high = -500.0, log_n + 500.0
    result = minimize_scalar(
        log_excess, bounds=(low, high), method="bounded", options={"xatol": 1e-11}
    )
    if not result.success or min(result.x - low, high - result.x) < 1e-6:
        raise ConvergenceError(
            "No interior minimiser of the drift/horizon loss at n=%g" % n, trace=trace
        )
    return float(result.x)


def gamma_star_numeric(fit, d_tokens, seq_len, span=1000.0):
    """
    Minimises the fitted loss along B~ * S~ = D / L at the horizon D and at
    span * D, and returns the growth exponent d log B~* / d log n of the
    minimiser, which is the gamma the optimal allocation follows.
    """
    trace = []
    n = d_tokens / seq_len
    first = _optimal_log_batch(fit, n, trace)
    second = _optimal_log_batch(fit, n * span, trace)
    return (second - first) / math.log(span)


@dataclass
class SCritEstimate:
    s_crit: float
    plateau: float
    threshold: float
    b_crit: float = None

    def as_dict(self):
        return {
            "s_crit": self.s_crit,
            "plateau": self.plateau,
            "threshold": self.threshold,
            "b_crit": self.b_crit,
        }


def estimate_s_crit(curves, delta, seq_len=None, d_tokens=None):
    """
    Smallest step count from which every longer run stays within a relative
    ``delta`` of the plateau loss, the plateau being the median loss of the
    largest-S tercile. With ``seq_len`` and ``d_tokens`` also returns
    B_crit = D / (L * S_crit).
    """
    points = sorted((float(steps), float(loss)) for steps, loss in curves)
    if len(points) < 4:
        raise InvalidArgument("Need at least 4 (S, loss) points")
    steps = np.array([point[0] for point in points])
    losses = np.array([point[1] for point in points])
    if (steps <= 0).any() or not np.isfinite(losses).all():
        raise InvalidArgument("Step counts must be positive and losses finite")
    if steps[-1] / steps[0] < 100:
        raise InvalidArgument("Step counts must span at least two decades")
    if delta < 0:
        raise InvalidArgument("delta must be non-negative")
    tail = max(1, math.ceil(len(points) / 3))
    plateau = float(np.median(losses[-tail:]))
    threshold = plateau * (1 + delta)
    within = losses <= threshold
    if not within[-1]:
        raise NotFound(
            "No step count stays within %g of the plateau" % delta,
            diagnostics={"plateau": plateau, "threshold": threshold, "losses": losses.tolist()},
        )
    # Start of the trailing run of points inside the tolerance.
    outside = np.flatnonzero(~within)
    start = outside[-1] + 1 if len(outside) else 0
    estimate = SCritEstimate(float(steps[start]), plateau, threshold)
    if seq_len and d_tokens:
        estimate.b_crit = d_tokens / (seq_len * estimate.s_crit)
    return estimate


def fit_drift_horizon(points, restarts=64, seed=0):
    """
    Fits a DriftHorizonFit to (S~, B~, loss) triples.
    """
    points = np.asarray(list(points), dtype=float)
    if points.ndim != 2 or points.shape[1] != 3 or len(points) < 5:
        raise InvalidArgument("Need at least 5 (virtual steps, virtual batch, loss) triples")
    result = fit_law(
        AdditiveForm(), points[:, 0], points[:, 1], points[:, 2], restarts=restarts, seed=seed
    )
    E, A, B, alpha, beta = AdditiveForm.to_params(result.theta)
    fit = DriftHorizonFit(E, A, B, alpha, beta)
    logger.info(
        "Drift/horizon fit alpha=%.4f beta=%.4f gamma*=%.4f", alpha, beta, fit.gamma_star
    )
    return fit
