import math

import numpy as np
import pytest

from trimask.exceptions import InvalidArgument
from trimask.forward import (
    anti_mask_pair,
    complementary_time,
    corrupt,
    elbo_weight,
    mask_from_uniforms,
    posterior_pi,
    posterior_rate,
    sample_time,
)
from trimask.schedules import (
    CosineSchedule,
    GeometricSchedule,
    LinearSchedule,
    PolynomialSchedule,
    parse_schedule,
)
from trimask.vocab import assemble_pair, pack_text

SCHEDULES = [LinearSchedule(), CosineSchedule(), PolynomialSchedule(2), GeometricSchedule(20)]


@pytest.fixture
def pair(vocab):
    return assemble_pair(vocab, "image-text", [4, 5, 6], [0, 1, 2, 3], 14)


@pytest.mark.parametrize("schedule", SCHEDULES, ids=lambda schedule: schedule.label())
def test_schedule_endpoints(schedule):
    assert float(schedule.mask_fraction(0.0)) == pytest.approx(0.0, abs=1e-12)
    assert float(schedule.mask_fraction(1.0)) == pytest.approx(1.0)
    grid = np.linspace(0, 1, 51)
    assert (np.diff(schedule.mask_fraction(grid)) > 0).all()
    assert schedule.inverse(schedule.mask_fraction(grid)) == pytest.approx(grid, abs=1e-9)
    assert parse_schedule(schedule.label()) == schedule


@pytest.mark.parametrize("value", ["sqrt", "linear:2", "poly:x", "geo:1"])
def test_parse_schedule_rejects(value):
    with pytest.raises(InvalidArgument):
        parse_schedule(value)


def test_full_corruption(pair, vocab):
    view = corrupt(pair, 1.0, rng=0)
    assert view.masked.tolist() == pair.maskable.tolist()
    assert view.tokens[2] == vocab.mask("image")
    assert view.tokens[7] == vocab.mask("text")
    # task, boundary and pad positions keep their tokens
    unmasked = ~pair.maskable
    assert np.array_equal(view.tokens[unmasked], pair.tokens[unmasked])


def test_time_out_of_range(pair):
    for t in (0.0, -0.1, 1.5):
        with pytest.raises(InvalidArgument):
            corrupt(pair, t)


def test_mask_rate_matches_schedule(vocab):
    sequence = pack_text(list(range(4)) * 50, 101, vocab)
    rng = np.random.default_rng(1)
    schedule = CosineSchedule()
    fractions = [corrupt(sequence, 0.4, schedule, rng).num_masked / 100 for _ in range(400)]
    assert np.mean(fractions) == pytest.approx(float(schedule.mask_fraction(0.4)), abs=0.01)


def test_monotone_coupling(pair):
    uniforms = np.random.default_rng(3).random(len(pair))
    previous = None
    for t in np.linspace(0.05, 1.0, 20):
        view = mask_from_uniforms(pair, t, LinearSchedule(), uniforms)
        if previous is not None:
            assert not (previous.masked & ~view.masked).any()
        previous = view


@pytest.mark.parametrize("schedule", SCHEDULES, ids=lambda schedule: schedule.label())
def test_anti_mask_pair_partitions(pair, schedule):
    first, second = anti_mask_pair(pair, 0.3, schedule, rng=5)
    assert not (first.masked & second.masked).any()
    assert np.array_equal(first.masked | second.masked, pair.maskable)
    total = float(schedule.mask_fraction(first.t)) + float(schedule.mask_fraction(second.t))
    assert total == pytest.approx(1.0)


def test_complementary_time_linear():
    assert complementary_time(0.3, LinearSchedule()) == pytest.approx(0.7)


def test_posterior_pi():
    assert posterior_pi(0.5, 0.1) == pytest.approx(0.2)
    # the first step from t = dt reveals everything that is still masked
    assert posterior_pi(0.25, 0.25) == pytest.approx(1.0)
    with pytest.raises(InvalidArgument):
        posterior_pi(0.5, 0.6)


def test_posterior_pi_matches_coupled_masks(pair):
    """
    Among positions masked at t, the share that was still clean at t - dt is
    the posterior probability.
    """
    schedule = CosineSchedule()
    rng = np.random.default_rng(11)
    masked_now = revealed = 0
    for _ in range(3000):
        uniforms = rng.random(len(pair))
        now = mask_from_uniforms(pair, 0.6, schedule, uniforms).masked
        before = mask_from_uniforms(pair, 0.45, schedule, uniforms).masked
        masked_now += now.sum()
        revealed += (now & ~before).sum()
    assert revealed / masked_now == pytest.approx(posterior_pi(0.6, 0.15, schedule), abs=0.02)


def test_posterior_rate_is_limit():
    schedule = GeometricSchedule(20)
    dt = 1e-6
    assert posterior_pi(0.7, dt, schedule) / dt == pytest.approx(
        posterior_rate(0.7, schedule), rel=1e-4
    )


def test_elbo_weight():
    assert elbo_weight(0.25) == pytest.approx(4.0)
    expected = (math.pi / 2 * math.sin(math.pi / 4)) / (1 - math.cos(math.pi / 4))
    assert elbo_weight(0.5, CosineSchedule()) == pytest.approx(expected)
    with pytest.raises(InvalidArgument):
        elbo_weight(1e-4)


def test_elbo_weighting_is_unbiased(vocab):
    """
    w(t) |I_t| averages to the number of maskable positions over t ~ U(eps, 1).
    """
    sequence = pack_text([0, 1, 2, 3, 0, 1, 2, 3], 9, vocab)
    rng = np.random.default_rng(7)
    totals = []
    for _ in range(10000):
        t = sample_time(rng)
        totals.append(elbo_weight(t) * corrupt(sequence, t, rng=rng).num_masked)
    assert np.mean(totals) == pytest.approx(8.0, rel=0.05)


@pytest.mark.slow
@pytest.mark.parametrize("t", [0.1, 0.5, 0.9])
def test_weighted_masked_loss_is_unbiased(t):
    """
    Over fresh masks at a fixed t, w(t) times the loss summed over masked
    positions averages to the loss summed over every position.
    """
    schedule = LinearSchedule()
    rng = np.random.default_rng(int(t * 10))
    losses = rng.exponential(size=512)
    weight = elbo_weight(t, schedule)
    assert weight == pytest.approx(1 / t)
    estimates = []
    for _ in range(10):
        masked = rng.random((10_000, len(losses))) < float(schedule.mask_fraction(t))
        estimates.append(weight * (masked @ losses))
    assert np.concatenate(estimates).mean() == pytest.approx(losses.sum(), rel=0.01)


@pytest.mark.slow
@pytest.mark.parametrize(
    "schedule", [LinearSchedule(), CosineSchedule()], ids=lambda schedule: schedule.label()
)
def test_posterior_pi_matches_discrete_chain(schedule):
    """
    In a chain of 100 steps where a token stays masked once masked, the share
    of tokens masked by step k that were first masked at step k is pi(k/T)
    within two standard errors at every step.
    """
    steps = 100
    size = 1_000_000
    rng = np.random.default_rng(13)
    # stratified uniforms with a random shift
    uniforms = (np.arange(size) + rng.random()) / size
    fractions = schedule.mask_fraction(np.arange(steps + 1) / steps)
    first_masked = np.searchsorted(fractions, uniforms, side="right")
    counts = np.bincount(first_masked, minlength=steps + 1)
    assert counts[0] == 0
    masked_by = np.cumsum(counts)
    for k in range(1, steps + 1):
        pi = posterior_pi(k / steps, 1 / steps, schedule)
        error = math.sqrt(pi * (1 - pi) / masked_by[k])
        assert abs(counts[k] / masked_by[k] - pi) <= 2 * error + 1e-9
