"""
Scaling-law fits and the frontiers derived from them.

N and D enter the laws in billions; FlopsModel works on raw counts and the
converters below sit at the boundary.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar

from .exceptions import ConvergenceError, IllPosedFit, InvalidArgument
from .fitting import DEFAULT_RESTARTS, fit_law, get_form, goodness
from .records import scaling_frame

logger = logging.getLogger("trimask.scaling")

BILLION = 1e9
DEFAULT_BOOTSTRAP = 20
HOLDOUT_FRACTION = 0.1
MIN_RECORDS = 10

# Published large-scale results, kept for comparison only.
REFERENCE_TRIMODAL_FIT = {
    "a": 0.14,
    "b": 0.17,
    "r2": 0.993,
    "mre": 0.005,
    "d_star_coefficient": 7754.0,
    "d_star_exponent": 0.84,
    "n_star_compute_exponent": 0.55,
    "d_star_compute_exponent": 0.45,
}


def to_billions(count):
    return np.asarray(count, dtype=float) / BILLION


def from_billions(value):
    return np.asarray(value, dtype=float) * BILLION


@dataclass
class ScalingFit:
    """
    A fitted law L(N, D) with N and D in billions, plus bootstrap statistics.
    """

    form: str
    E: float
    A: float
    B: float
    a: float
    b: float
    r2: float = None
    mre: float = None
    cv_r2: float = None
    cv_mre: float = None
    bootstrap: list = field(default_factory=list)
    n_records: int = 0

    @property
    def law(self):
        return get_form(self.form)

    @property
    def theta(self):
        return self.law.to_theta(self.E, self.A, self.B, self.a, self.b)

    @property
    def alpha_frontier(self):
        """
        Exponent of the compute-optimal token count D*(N).
        """
        return self.a / self.b

    def predict(self, n, d):
        """
        Predicted loss at N and D in billions.
        """
        n, d = np.broadcast_arrays(np.asarray(n, dtype=float), np.asarray(d, dtype=float))
        values = self.law.predict(self.theta, n.reshape(-1), d.reshape(-1))
        return values.reshape(n.shape) if n.shape else float(values[0])

    def _reducible(self, n):
        # (the part of) the loss that depends on N only
        if self.form == "kaplan":
            return self.A * n ** -(self.a / self.b)
        return self.A * n**-self.a

    def bootstrap_summary(self):
        if not self.bootstrap:
            return {}
        matrix = np.array(self.bootstrap)
        names = self.law.param_names
        return {
            name: {
                "median": float(np.median(matrix[:, column])),
                "p05": float(np.percentile(matrix[:, column], 5)),
                "p95": float(np.percentile(matrix[:, column], 95)),
            }
            for column, name in enumerate(names)
        }

    def as_dict(self):
        return {
            "form": self.form,
            "units": "billions",
            "params": {"E": self.E, "A": self.A, "B": self.B, "a": self.a, "b": self.b},
            "alpha_frontier": self.alpha_frontier,
            "r2": self.r2,
            "mre": self.mre,
            "cv_r2": self.cv_r2,
            "cv_mre": self.cv_mre,
            "n_records": self.n_records,
            "bootstrap": [list(map(float, row)) for row in self.bootstrap],
            "bootstrap_summary": self.bootstrap_summary(),
        }

    @classmethod
    def from_dict(cls, data):
        params = data["params"]
        return cls(
            form=data.get("form", "kaplan"),
            E=params["E"],
            A=params["A"],
            B=params["B"],
            a=params["a"],
            b=params["b"],
            r2=data.get("r2"),
            mre=data.get("mre"),
            cv_r2=data.get("cv_r2"),
            cv_mre=data.get("cv_mre"),
            bootstrap=data.get("bootstrap", []),
            n_records=data.get("n_records", 0),
        )


def _check_span(frame):
    if len(frame) < MIN_RECORDS:
        raise IllPosedFit(
            "Need at least %d runs, got %d" % (MIN_RECORDS, len(frame)), axis=None
        )
    for axis in ("n", "d"):
        values = frame[axis].to_numpy()
        if (values <= 0).any() or values.max() / values.min() < 10:
            raise IllPosedFit(
                "The %s axis spans less than one decade" % axis.upper(), axis=axis.upper()
            )


def fit_power_law(
    records,
    form="kaplan",
    restarts=DEFAULT_RESTARTS,
    bootstrap_k=DEFAULT_BOOTSTRAP,
    seed=0,
):
    """
    Fits the scaling law to runs (RunRecords, a record log, a CSV path or a
    frame with n, d and loss columns in raw counts).

    Each of the ``bootstrap_k`` replicates refits on a random 90% of the runs,
    warm-started from the full fit, and is scored on the remaining 10%; the
    reported cv_r2 and cv_mre are the means of those held-out scores.
    """
    frame = scaling_frame(records)
    _check_span(frame)
    n = to_billions(frame["n"].to_numpy())
    d = to_billions(frame["d"].to_numpy())
    loss = frame["loss"].to_numpy(dtype=float)
    law = get_form(form)

    full = fit_law(law, n, d, loss, restarts=restarts, seed=seed)
    r2, mre = goodness(law.predict(full.theta, n, d), loss)

    rng = np.random.default_rng(seed)
    held_out = max(1, int(round(HOLDOUT_FRACTION * len(loss))))
    replicates, cv_r2, cv_mre = [], [], []
    for replicate in range(bootstrap_k):
        order = rng.permutation(len(loss))
        test, train = order[:held_out], order[held_out:]
        result = fit_law(
            law,
            n[train],
            d[train],
            loss[train],
            restarts=max(1, restarts // 8),
            seed=seed + replicate + 1,
            x0=full.theta,
        )
        replicates.append(law.to_params(result.theta))
        score_r2, score_mre = goodness(law.predict(result.theta, n[test], d[test]), loss[test])
        cv_r2.append(score_r2)
        cv_mre.append(score_mre)
        logger.debug("bootstrap %d/%d held-out MRE %.4g", replicate + 1, bootstrap_k, score_mre)

    E, A, B, a, b = law.to_params(full.theta)
    fit = ScalingFit(
        form=law.name,
        E=E,
        A=A,
        B=B,
        a=a,
        b=b,
        r2=r2,
        mre=mre,
        cv_r2=float(np.mean(cv_r2)) if cv_r2 else None,
        cv_mre=float(np.mean(cv_mre)) if cv_mre else None,
        bootstrap=replicates,
        n_records=len(loss),
    )
    logger.info(
        "%s fit on %d runs: a=%.4f b=%.4f R2=%.4f MRE=%.4g",
        law.name,
        len(loss),
        a,
        b,
        r2,
        mre,
    )
    return fit


def d_star_coefficient(fit):
    """
    K in D*(N) = K N^(a/b), minimising the Kaplan law along N * D = const.
    """
    if fit.form != "kaplan":
        raise InvalidArgument("The closed-form frontier needs the Kaplan form")
    return fit.b * fit.B / (fit.a * fit.A)


def d_star_of_n(fit, n):
    """
    Compute-optimal tokens for N parameters, both in billions.
    """
    n = np.asarray(n, dtype=float)
    if (n <= 0).any():
        raise InvalidArgument("N must be positive")
    return d_star_coefficient(fit) * n**fit.alpha_frontier


class FlopsModel:
    """
    Training FLOPs per token as a function of the non-embedding parameter
    count. ``six_n`` is the classic 6N; ``detailed`` adds the unembedding
    matmul and attention scores for a model of fixed width/depth ratio.
    """

    MODES = ("six_n", "detailed")

    def __init__(self, mode="six_n", vocab_size=None, seq_len=None, rho=128, mlp_factor=2.75):
        if mode not in self.MODES:
            raise InvalidArgument("Unknown FLOPs mode %r" % mode)
        if mode == "detailed" and not (vocab_size and seq_len):
            raise InvalidArgument("Detailed FLOPs need the vocabulary size and sequence length")
        self.mode = mode
        self.vocab_size = vocab_size
        self.seq_len = seq_len
        self.rho = rho
        self.mlp_factor = mlp_factor

    def dims(self, n_params):
        """
        (d_emb, n_layers) of a model with ``n_params`` block parameters.
        """
        per_layer = 4 + 3 * self.mlp_factor
        d_emb = (self.rho * n_params / per_layer) ** (1 / 3)
        return d_emb, d_emb / self.rho

    def per_token(self, n_params):
        n_params = np.asarray(n_params, dtype=float)
        if self.mode == "six_n":
            return 6 * n_params
        d_emb, n_layers = self.dims(n_params)
        return 6 * n_params + 6 * self.vocab_size * d_emb + 12 * n_layers * self.seq_len * d_emb

    def tokens(self, flops, n_params):
        return np.asarray(flops, dtype=float) / self.per_token(n_params)

    def as_dict(self):
        return {
            "mode": self.mode,
            "vocab_size": self.vocab_size,
            "seq_len": self.seq_len,
            "rho": self.rho,
        }


def closed_form_optimum(fit, flops):
    """
    (N*, D*) in billions for C = 6 N D: N* = (C' / K)^tau and D* = C' / N*,
    where C' = C / (6 10^18), K the D*(N) coefficient and tau = b / (a + b).
    """
    budget = flops / (6 * BILLION**2)
    tau = fit.b / (fit.a + fit.b)
    n_star = (budget / d_star_coefficient(fit)) ** tau
    return n_star, budget / n_star


def compute_optimal(fit, flops, model=None, bounds=(1e-9, 1e6)):
    """
    Loss-minimising (N*, D*) in billions under a FLOPs budget. ``six_n`` with
    the Kaplan form uses the closed form; otherwise the loss along the budget
    is minimised over log N by a bounded scalar search.
    """
    model = model or FlopsModel()
    if not flops > 0:
        raise InvalidArgument("The FLOPs budget must be positive")
    if model.mode == "six_n" and fit.form == "kaplan":
        return closed_form_optimum(fit, flops)
    return numeric_optimum(fit, flops, model, bounds)


def numeric_optimum(fit, flops, model=None, bounds=(1e-9, 1e6)):
    model = model or FlopsModel()
    trace = []

    def loss_along_budget(log_n):
        n = math.exp(log_n)
        d = to_billions(model.tokens(flops, from_billions(n)))
        value = math.log(fit.predict(n, d) - fit.E)
        trace.append((log_n, value))
        return value

    low, high = math.log(bounds[0]), math.log(bounds[1])
    result = minimize_scalar(
        loss_along_budget, bounds=(low, high), method="bounded", options={"xatol": 1e-10}
    )
    if not result.success or min(result.x - low, high - result.x) < 1e-6:
        raise ConvergenceError(
            "No interior optimum for C=%g inside N in %s billion" % (flops, bounds), trace=trace
        )
    n_star = math.exp(result.x)
    return n_star, float(to_billions(model.tokens(flops, from_billions(n_star))))


def frontier_table(fit, n_grid):
    """
    D*(N) and tokens per parameter over N in billions.
    """
    n_grid = np.asarray(n_grid, dtype=float)
    d_star = d_star_of_n(fit, n_grid)
    return pd.DataFrame(
        {
            "n": n_grid,
            "d_star": d_star,
            "tpp": d_star / n_grid,
            "loss": fit.predict(n_grid, d_star),
        }
    )


def compute_table(fit, budgets, model=None):
    rows = []
    for flops in budgets:
        n_star, d_star = compute_optimal(fit, flops, model)
        rows.append(
            {
                "flops": float(flops),
                "n_star": n_star,
                "d_star": d_star,
                "tpp": d_star / n_star,
                "loss": fit.predict(n_star, d_star),
            }
        )
    return pd.DataFrame(rows)


def iso_curves(fit, levels, n_grid):
    """
    Isoloss contours: for each level and N (billions) the D that reaches it.
    Levels at or below E have no contour and are listed in the frame's
    ``attrs["empty_levels"]``; N values that cannot reach a level are skipped.
    """
    n_grid = np.asarray(n_grid, dtype=float)
    rows, empty = [], []
    for level in levels:
        excess = level - fit.E
        if excess <= 0:
            empty.append(float(level))
            continue
        if fit.form == "kaplan":
            room = excess ** (1 / fit.b) - fit._reducible(n_grid)
            with np.errstate(divide="ignore"):
                d = np.where(room > 0, fit.B / room, np.inf)
        else:
            room = excess - fit._reducible(n_grid)
            with np.errstate(divide="ignore", invalid="ignore"):
                d = np.where(room > 0, (fit.B / room) ** (1 / fit.b), np.inf)
        reachable = np.isfinite(d)
        if not reachable.any():
            empty.append(float(level))
        for n, tokens in zip(n_grid[reachable], d[reachable]):
            rows.append({"level": float(level), "n": float(n), "d": float(tokens)})
    if empty:
        logger.info("No isoloss contour for levels %s (E=%.4g)", empty, fit.E)
    frame = pd.DataFrame(rows, columns=["level", "n", "d"])
    frame.attrs["empty_levels"] = empty
    return frame


def iso_flops(fit, budgets, n_grid, model=None):
    """
    Predicted loss along each FLOPs budget over an N grid (billions), with the
    grid argmin flagged.
    """
    model = model or FlopsModel()
    n_grid = np.asarray(n_grid, dtype=float)
    frames = []
    for flops in budgets:
        d = to_billions(model.tokens(flops, from_billions(n_grid)))
        loss = fit.predict(n_grid, d)
        argmin = np.zeros(len(n_grid), dtype=bool)
        argmin[int(np.argmin(loss))] = True
        frames.append(
            pd.DataFrame(
                {"flops": float(flops), "n": n_grid, "d": d, "loss": loss, "argmin": argmin}
            )
        )
    return pd.concat(frames, ignore_index=True)
