"""
Shared power-law fitting engine.

Both law families are fitted on log-loss residuals, r_i = log pred_i - log y_i,
over the internal vector theta = (E, log A, log B, a, b). A global basin-hopping
search around an L-BFGS-B local optimiser finds the basin; a least-squares
trust-region pass polishes the incumbent.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import basinhopping, least_squares

from .exceptions import ConvergenceError, InvalidArgument

logger = logging.getLogger("trimask.fitting")

DEFAULT_RESTARTS = 64

# Objective reported for parameters whose prediction overflows.
_OVERFLOW = 1e12


class LawForm:
    """
    A two-variable power law with parameters (E, A, B, a, b).
    """

    name = None
    param_names = ("E", "A", "B", "a", "b")

    def predict(self, theta, x1, x2):
        return self.value_and_jacobian(theta, x1, x2)[0]

    def value_and_jacobian(self, theta, x1, x2):
        """
        Returns the prediction and its Jacobian with respect to theta.
        """
        raise NotImplementedError()

    @staticmethod
    def to_params(theta):
        E, log_a_coef, log_b_coef, a, b = theta
        return float(E), float(np.exp(log_a_coef)), float(np.exp(log_b_coef)), float(a), float(b)

    @staticmethod
    def to_theta(E, A, B, a, b):
        return np.array([E, np.log(A), np.log(B), a, b], dtype=float)


class KaplanForm(LawForm):
    """
    L = E + (A * x1^(-a/b) + B / x2)^b
    """

    name = "kaplan"

    def value_and_jacobian(self, theta, x1, x2):
        E, log_a_coef, log_b_coef, a, b = theta
        log_x1 = np.log(x1)
        log_u = log_a_coef - (a / b) * log_x1
        log_w = log_b_coef - np.log(x2)
        log_s = np.logaddexp(log_u, log_w)
        share_u = np.exp(log_u - log_s)
        share_w = np.exp(log_w - log_s)
        with np.errstate(over="ignore"):
            power = np.exp(b * log_s)
        pred = E + power
        jac = np.empty((len(pred), 5))
        jac[:, 0] = 1.0
        jac[:, 1] = b * power * share_u
        jac[:, 2] = b * power * share_w
        jac[:, 3] = -power * share_u * log_x1
        jac[:, 4] = power * (log_s + (a / b) * log_x1 * share_u)
        return pred, jac


class AdditiveForm(LawForm):
    """
    L = E + A * x1^(-a) + B * x2^(-b)
    """

    name = "additive"

    def value_and_jacobian(self, theta, x1, x2):
        E, log_a_coef, log_b_coef, a, b = theta
        log_x1, log_x2 = np.log(x1), np.log(x2)
        with np.errstate(over="ignore"):
            first = np.exp(log_a_coef - a * log_x1)
            second = np.exp(log_b_coef - b * log_x2)
        pred = E + first + second
        jac = np.empty((len(pred), 5))
        jac[:, 0] = 1.0
        jac[:, 1] = first
        jac[:, 2] = second
        jac[:, 3] = -first * log_x1
        jac[:, 4] = -second * log_x2
        return pred, jac


FORMS = {KaplanForm.name: KaplanForm, AdditiveForm.name: AdditiveForm}


def get_form(form):
    if isinstance(form, LawForm):
        return form
    try:
        return FORMS[form]()
    except KeyError:
        raise InvalidArgument(
            "Unknown law form %r (expected one of %s)" % (form, ", ".join(FORMS))
        )


@dataclass
class EngineResult:
    theta: np.ndarray
    objective: float
    evaluations: int
    trace: list = field(default_factory=list)


def _bounds(y, exponent_bounds):
    low, high = exponent_bounds
    return [
        (0.0, float(np.min(y)) * (1 - 1e-9)),
        (-30.0, 30.0),
        (-30.0, 30.0),
        (low, high),
        (low, high),
    ]


def fit_law(
    form,
    x1,
    x2,
    y,
    restarts=DEFAULT_RESTARTS,
    seed=0,
    x0=None,
    exponent_bounds=(1e-3, 3.0),
):
    """
    Fits ``form`` to observations y(x1, x2) by minimising half the sum of
    squared log residuals. ``x0`` warm-starts the search, as the bootstrap
    replicates do from the full-data fit.
    """
    form = get_form(form)
    x1, x2, y = (np.asarray(values, dtype=float) for values in (x1, x2, y))
    if (x1 <= 0).any() or (x2 <= 0).any() or (y <= 0).any():
        raise InvalidArgument("Power-law fits need positive inputs and losses")
    log_y = np.log(y)
    bounds = _bounds(y, exponent_bounds)
    lower = np.array([bound[0] for bound in bounds])
    upper = np.array([bound[1] for bound in bounds])
    trace = []

    def residuals(theta):
        pred, jac = form.value_and_jacobian(theta, x1, x2)
        return np.log(pred) - log_y, jac / pred[:, None]

    def objective(theta):
        with np.errstate(all="ignore"):
            residual, jac = residuals(theta)
        if not (np.isfinite(residual).all() and np.isfinite(jac).all()):
            return _OVERFLOW, np.zeros_like(theta)
        return 0.5 * float(residual @ residual), jac.T @ residual

    if x0 is None:
        x0 = np.array([0.5 * np.min(y), 0.0, 0.0, 0.3, 0.3])
    x0 = np.clip(np.asarray(x0, dtype=float), lower, upper)

    def record(theta, value, accepted):
        trace.append((float(value), bool(accepted)))

    result = basinhopping(
        objective,
        x0,
        niter=restarts,
        minimizer_kwargs={"method": "L-BFGS-B", "jac": True, "bounds": bounds},
        callback=record,
        seed=seed,
    )
    theta = np.clip(result.x, lower, upper)
    best = objective(theta)[0]
    if not np.isfinite(best) or best >= _OVERFLOW:
        raise ConvergenceError("Power-law search found no finite optimum", trace=trace)
    try:
        with np.errstate(all="ignore"):
            polished = least_squares(
                lambda theta: residuals(theta)[0],
                theta,
                jac=lambda theta: residuals(theta)[1],
                bounds=(lower, upper),
                xtol=1e-15,
                ftol=1e-15,
                gtol=1e-15,
            )
    except ValueError as error:
        logger.debug("Skipping polish: %s", error)
    else:
        if polished.success and polished.cost <= best:
            theta, best = polished.x, float(polished.cost)
    logger.debug(
        "Fitted %s law: objective %.3e after %d basin hops", form.name, best, restarts
    )
    return EngineResult(theta, best, result.nfev, trace)


def goodness(pred, y):
    """
    (R^2, mean relative error) of predictions against observations.
    """
    pred, y = np.asarray(pred, dtype=float), np.asarray(y, dtype=float)
    total = float(((y - y.mean()) ** 2).sum())
    residual = float(((y - pred) ** 2).sum())
    r2 = 1.0 - residual / total if total > 0 else float(residual == 0)
    return r2, float(np.mean(np.abs(pred - y) / y))
