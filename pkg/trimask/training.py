import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy import stats

from .checkpoints import save_checkpoint
from .exceptions import ConvergenceError, InvalidArgument
from .forward import DEFAULT_TIME_FLOOR, anti_mask_pair, corrupt, elbo_weight, sample_time
from .losses import DEFAULT_Z_LOSS, masked_loss
from .optim import AdamW, AdamWHyper, build_param_groups, make_scheduler
from .records import RunRecord, append_record
from .schedules import parse_schedule
from .sde import kappa, rescale_adamw

logger = logging.getLogger("trimask.training")

# Stratified diffusion times used for validation losses.
VALIDATION_TIMES = tuple(round(0.1 * k, 1) for k in range(1, 10))
VALIDATION_SEED = 1234
DEFAULT_VALIDATION_SIZE = 16

# Spawn key of the random stream the unique sample pool is drawn from.
POOL_STREAM = 1

# Smallest sample count the gradient variance probe accepts.
MIN_PROBE_BATCHES = 100


@dataclass
class BatchPlan:
    """
    ``batches`` lists, per optimisation step, (sample index, view) pairs; view
    1 is the complementary anti-mask view of the same sample.
    """

    unique: int
    batches: list


def batch_schedule(steps, batch_size, anti_mask=False, epochs=1, shuffle=True, rng=None):
    """
    Orders ``steps`` batches of ``batch_size`` views over the unique samples.

    With anti-masking every batch holds batch_size / 2 samples, each followed
    by its complement, and each unique sample is used once per epoch. The
    baseline iterates the unique samples ``epochs`` times, re-shuffled every
    pass. Both consume exactly steps * batch_size views.
    """
    if steps < 1 or batch_size < 1 or epochs < 1:
        raise InvalidArgument("steps, batch_size and epochs must be positive")
    views = 2 if anti_mask else 1
    if batch_size % views:
        raise InvalidArgument("Anti-masking needs an even batch size")
    rng = np.random.default_rng(rng)
    per_batch = batch_size // views
    total = steps * per_batch
    unique = -(-total // epochs)
    order = []
    for _ in range(epochs):
        order.extend(rng.permutation(unique) if shuffle else range(unique))
    batches = []
    for step in range(steps):
        chunk = order[step * per_batch : (step + 1) * per_batch]
        batches.append([(int(index), view) for index in chunk for view in range(views)])
    return BatchPlan(unique, batches)


def sample_pool(dataset, unique, seed=0):
    """
    The unique samples a run iterates over. The pool has its own random
    stream, so runs with the same seed and unique count share it whatever
    their masking mode.
    """
    return dataset.draw(unique, np.random.default_rng([seed, POOL_STREAM]))


def view_weight(view, schedule, floor=DEFAULT_TIME_FLOOR):
    # Complements of nearly fully masked views are clamped to the time floor.
    return elbo_weight(max(view.t, floor * (1 + 1e-9)), schedule, floor=floor)


def corrupt_batch(samples, batch, schedule, rng, time_floor=DEFAULT_TIME_FLOOR, t=None):
    """
    Corrupts the views of one batch; returns the CorruptedSequences and their
    ELBO weights in batch order.
    """
    views, weights = [], []
    pairs = {}
    for index, view in batch:
        time = sample_time(rng, time_floor) if t is None else t
        if view == 0:
            first, second = anti_mask_pair(samples[index], time, schedule, rng)
            pairs[index] = second
            chosen = first
        else:
            chosen = pairs.pop(index)
        views.append(chosen)
        weights.append(view_weight(chosen, schedule, time_floor) if chosen.num_masked else 0.0)
    return views, weights


def _tensors(views, device=None):
    tokens = torch.as_tensor(np.stack([view.tokens for view in views]), device=device)
    targets = torch.as_tensor(np.stack([view.base.tokens for view in views]), device=device)
    masked = torch.as_tensor(np.stack([view.masked for view in views]), device=device)
    attention = torch.as_tensor(np.stack([view.attention_mask for view in views]), device=device)
    return tokens, targets, masked, attention


def batch_loss(model, views, weights, z_loss=DEFAULT_Z_LOSS):
    tokens, targets, masked, attention = _tensors(views)
    logits = model.logits(tokens, attention)
    weight = torch.as_tensor(weights, dtype=logits.dtype)
    return masked_loss(logits, targets, masked, weight, z_loss)


@torch.no_grad()
def validation_loss(model, sequences, schedule=None, times=VALIDATION_TIMES, seed=VALIDATION_SEED):
    """
    ELBO-weighted masked cross-entropy averaged over a fixed time grid with a
    fixed masking seed, so repeated calls on a frozen model agree exactly.
    """
    schedule = parse_schedule(schedule or "linear")
    rng = np.random.default_rng(seed)
    losses = []
    for t in times:
        views = [corrupt(sequence, t, schedule, rng) for sequence in sequences]
        weights = [elbo_weight(t, schedule) for _ in views]
        losses.append(float(batch_loss(model, views, weights, z_loss=0.0).diffusion))
    loss = float(np.mean(losses))
    if not math.isfinite(loss):
        raise ConvergenceError("Validation loss is not finite")
    return loss


def train(
    model,
    dataset,
    budget,
    batch_size,
    hyper=None,
    schedule="linear",
    anti_mask=False,
    epochs=1,
    seed=0,
    shuffle=True,
    z_loss=DEFAULT_Z_LOSS,
    time_floor=DEFAULT_TIME_FLOOR,
    grad_accum=1,
    validation=None,
    sde_base=None,
    sde_gamma=0.0,
    checkpoint=None,
    record_log=None,
    config_hash=None,
    log_every=50,
):
    """
    Trains ``model`` on ``dataset`` for a token budget of ``budget`` and
    returns the RunRecord. The step count is budget // (batch_size * L), so
    the record's D is the largest whole number of batches inside the budget.

    With ``sde_base`` the base AdamW tuple is rescaled by kappa and the
    record carries the virtual batch B / kappa and virtual steps D / (L B~).
    """
    hyper = hyper or AdamWHyper()
    schedule = parse_schedule(schedule)
    length = dataset.length
    steps = budget // (batch_size * length)
    if steps < 1:
        raise InvalidArgument(
            "A budget of %d tokens is less than one batch of %d x %d"
            % (budget, batch_size, length)
        )
    if grad_accum < 1 or batch_size % grad_accum:
        raise InvalidArgument("grad_accum must divide the batch size")
    d_tokens = steps * batch_size * length
    virtual_batch = virtual_steps = None
    if sde_base is not None:
        factor = kappa(d_tokens, batch_size, sde_base, sde_gamma)
        hyper = rescale_adamw(sde_base, factor).apply(hyper)
        virtual_batch = batch_size / factor
        virtual_steps = d_tokens / (length * virtual_batch)
        logger.info("SDE rescaling with kappa=%.4g: %s", factor, hyper)

    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    plan = batch_schedule(steps, batch_size, anti_mask, epochs, shuffle, rng)
    samples = sample_pool(dataset, plan.unique, seed)
    if validation is None:
        validation = dataset.draw(
            DEFAULT_VALIDATION_SIZE, np.random.default_rng(VALIDATION_SEED)
        )

    model.train()
    optimizer = AdamW(build_param_groups(model, hyper))
    scheduler = make_scheduler(optimizer, hyper, steps)
    micro = batch_size // grad_accum
    logger.info(
        "Training %d steps of %d x %d tokens (anti_mask=%s, epochs=%d)",
        steps,
        batch_size,
        length,
        anti_mask,
        epochs,
    )
    for step, batch in enumerate(plan.batches, 1):
        views, weights = corrupt_batch(samples, batch, schedule, rng, time_floor)
        optimizer.zero_grad(set_to_none=True)
        total = 0.0
        for start in range(0, batch_size, micro):
            loss = batch_loss(
                model, views[start : start + micro], weights[start : start + micro], z_loss
            ).total
            (loss / grad_accum).backward()
            total += float(loss) / grad_accum
        optimizer.step()
        scheduler.step()
        if step % log_every == 0 or step == steps:
            logger.info(
                "step %d/%d loss %.4f lr %.3g",
                step,
                steps,
                total,
                scheduler.get_last_lr()[0],
            )
    model.eval()
    final_loss = validation_loss(model, validation, schedule)
    record = RunRecord(
        n_nonembed=model.num_parameters(non_embedding=True),
        n_total=model.num_parameters(),
        d_tokens=d_tokens,
        batch_size=batch_size,
        seq_len=length,
        steps=steps,
        final_loss=final_loss,
        seed=seed,
        schedule=schedule.label(),
        anti_mask=anti_mask,
        epochs=epochs,
        virtual_batch=virtual_batch,
        virtual_steps=virtual_steps,
        config_hash=config_hash,
    )
    logger.info("Finished: D=%d final validation loss %.4f", d_tokens, final_loss)
    if checkpoint is not None:
        save_checkpoint(checkpoint, model, run=record.as_dict())
    if record_log is not None:
        append_record(record_log, record)
    return record


@dataclass
class VarianceReport:
    iid_trace: float
    anti_trace: float
    p_value: float
    n_batches: int
    batch_size: int

    @property
    def ratio(self):
        if self.iid_trace == 0:
            return float("nan")
        return self.anti_trace / self.iid_trace

    def as_dict(self):
        return {
            "iid_trace": self.iid_trace,
            "anti_trace": self.anti_trace,
            "ratio": self.ratio,
            "p_value": self.p_value,
            "n_batches": self.n_batches,
            "batch_size": self.batch_size,
        }


def _flat_gradient(model, views, weights, z_loss):
    model.zero_grad(set_to_none=True)
    batch_loss(model, views, weights, z_loss).total.backward()
    parts = [
        (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
        for p in model.parameters()
    ]
    return torch.cat(parts).double()


def _probe_batch(mode, samples, times, schedule, rng, time_floor):
    views, weights = [], []
    for sample in samples:
        t = float(rng.choice(times))
        first, second = anti_mask_pair(sample, t, schedule, rng)
        if mode == "iid":
            second = corrupt(sample, float(rng.choice(times)), schedule, rng)
        for view in (first, second):
            views.append(view)
            weights.append(view_weight(view, schedule, time_floor) if view.num_masked else 0.0)
    return views, weights


def grad_variance_probe(
    model,
    sequences,
    schedule="linear",
    times=VALIDATION_TIMES,
    n_batches=MIN_PROBE_BATCHES,
    batch_size=8,
    seed=0,
    z_loss=DEFAULT_Z_LOSS,
    time_floor=DEFAULT_TIME_FLOOR,
):
    """
    Trace of the covariance of the minibatch gradient under iid masking and
    under anti-masking, at the same number of views per batch.

    Every batch holds batch_size / 2 base samples, each seen twice: under
    iid masking with a second independent mask, under anti-masking with the
    complement. The p-value is a one-sided Welch test that anti-masking
    has the smaller per-batch squared deviation from the mean gradient.
    """
    if n_batches < MIN_PROBE_BATCHES:
        raise InvalidArgument("The probe needs at least %d batches" % MIN_PROBE_BATCHES)
    if batch_size < 2 or batch_size % 2:
        raise InvalidArgument("The probe needs an even batch size")
    schedule = parse_schedule(schedule)
    times = np.asarray(times, dtype=float)
    seeds = np.random.SeedSequence(seed).spawn(n_batches)
    model.eval()

    def gradients(mode):
        for child in seeds:
            rng = np.random.default_rng(child)
            chosen = rng.integers(len(sequences), size=batch_size // 2)
            samples = [sequences[int(index)] for index in chosen]
            views, weights = _probe_batch(mode, samples, times, schedule, rng, time_floor)
            yield _flat_gradient(model, views, weights, z_loss)

    deviations = {}
    traces = {}
    for mode in ("iid", "anti"):
        # Welford pass for the mean, then a replayed pass for the deviations.
        mean, count = None, 0
        for gradient in gradients(mode):
            count += 1
            if mean is None:
                mean = torch.zeros_like(gradient)
            mean += (gradient - mean) / count
        squared = np.array(
            [float(((gradient - mean) ** 2).sum()) for gradient in gradients(mode)]
        )
        deviations[mode] = squared
        traces[mode] = float(squared.sum() / (n_batches - 1))
    if np.ptp(deviations["iid"]) == 0 and np.ptp(deviations["anti"]) == 0:
        p_value = float("nan")
    else:
        p_value = float(
            stats.ttest_ind(
                deviations["anti"], deviations["iid"], equal_var=False, alternative="less"
            ).pvalue
        )
    report = VarianceReport(traces["iid"], traces["anti"], p_value, n_batches, batch_size)
    logger.info(
        "Gradient variance iid %.4g anti %.4g (p=%.3g)",
        report.iid_trace,
        report.anti_trace,
        report.p_value,
    )
    return report
