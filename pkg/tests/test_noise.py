from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levy_picard.errors import InputDomainError, SamplingError
from levy_picard.noise import (JumpMeasure, NoiseBundle, TimeGrid, brownian_increments, brownian_path,
                               compensator_drift, levy_ito_path, sample_jump_count, sample_prm,
                               substream)

N = 100_000


def within(sample_stat, expected, se, k=4.0):
    return abs(sample_stat - expected) <= k * se


# sample_jump_count ---------------------------------------------------------

def test_jump_count_empty_measure_is_zero():
    rng = substream(1, "jumps", 0)
    m = JumpMeasure.empty(1.0)
    assert all(sample_jump_count(m, 5.0, rng) == 0 for _ in range(100))


def test_jump_count_zero_horizon_is_zero():
    rng = substream(1, "jumps", 0)
    m = JumpMeasure.atomic([0.5], [3.0], 1.0)
    assert all(sample_jump_count(m, 0.0, rng) == 0 for _ in range(100))


def test_jump_count_negative_horizon_rejected():
    with pytest.raises(InputDomainError):
        sample_jump_count(JumpMeasure.atomic([0.5], [1.0], 1.0), -1.0, substream(0, "jumps", 0))


def test_jump_count_poisson_moments():
    m = JumpMeasure.atomic([0.5], [2.0], 1.0)
    rng = substream(11, "jumps", 0)
    x = np.array([sample_jump_count(m, 3.0, rng) for _ in range(N)], dtype=float)
    lam = 6.0
    # Poisson: var = lam, fourth central moment = lam (1 + 3 lam).
    assert within(x.mean(), lam, math.sqrt(lam / N))
    assert within(x.var(ddof=1), lam, math.sqrt((lam * (1 + 3 * lam) - lam**2) / N))


# sample_prm ----------------------------------------------------------------

def test_prm_single_atom_marks_and_counts():
    m = JumpMeasure.atomic([1.0], [4.0], 2.0)
    grid = TimeGrid(1.0, 8)
    rng = substream(5, "jumps", 0)
    counts = np.empty(N)
    marks = []
    for i in range(N):
        times, mk = sample_prm(m, grid, rng)
        counts[i] = len(times)
        if i < 2000:
            marks.append(mk)
    assert np.all(np.concatenate(marks) == 1.0)
    assert within(counts.mean(), 4.0, math.sqrt(4.0 / N))


def test_prm_empty_measure():
    times, marks = sample_prm(JumpMeasure.empty(1.0), TimeGrid(1.0, 4), substream(0, "jumps", 0))
    assert times.shape == (0,) and marks.shape[0] == 0


def test_prm_categorical_mark_frequencies():
    m = JumpMeasure.atomic([-0.5, 0.5], [3.0, 1.0], 1.0)
    rng = substream(3, "jumps", 0)
    grid = TimeGrid(1.0, 4)
    marks = np.concatenate([sample_prm(m, grid, rng)[1][:, 0] for _ in range(25_000)])
    n = len(marks)
    p = np.mean(marks == -0.5)
    assert within(p, 0.75, math.sqrt(0.75 * 0.25 / n))


def test_prm_times_sorted_in_half_open_interval():
    m = JumpMeasure.atomic([0.2], [50.0], 1.0)
    rng = substream(9, "jumps", 0)
    for _ in range(200):
        times, _ = sample_prm(m, TimeGrid(2.0, 16), rng)
        assert np.all(times > 0) and np.all(times <= 2.0)
        assert np.all(np.diff(times) >= 0)


def test_density_rejection_sampler():
    m = JumpMeasure.from_density(lambda x: np.full(len(x), 0.5), cutoff=1.0, envelope=0.5)
    rng = substream(2, "jumps", 0)
    marks = np.concatenate([sample_prm(m, TimeGrid(1.0, 4), rng)[1][:, 0] for _ in range(3000)])
    assert np.all(np.abs(marks) < 1.0)
    # Uniform on (-1, 1): variance 1/3.
    assert within(marks.mean(), 0.0, math.sqrt(1 / 3 / len(marks)))


def test_density_rejection_attempt_cap():
    m = JumpMeasure.from_density(lambda x: np.full(len(x), 1e-12), cutoff=1.0, envelope=1.0,
                                 total_mass=5.0, max_attempts=3)
    with pytest.raises(SamplingError, match="envelope"):
        for _ in range(50):
            sample_prm(m, TimeGrid(1.0, 4), substream(0, "jumps", 0))


def test_marks_outside_cutoff_rejected():
    with pytest.raises(InputDomainError):
        JumpMeasure.atomic([1.0], [1.0], 1.0)


# compensator_drift ---------------------------------------------------------

def test_compensator_symmetric_atoms():
    m = JumpMeasure.atomic([1.0, -1.0], [2.5, 2.5], 2.0)
    assert np.all(compensator_drift(m) == 0.0)


def test_compensator_single_atom():
    m = JumpMeasure.atomic([0.5], [2.0], 1.0)
    assert compensator_drift(m)[0] == 1.0


@pytest.mark.parametrize("c", [0.3, 1.0, 4.0])
def test_compensator_uniform_density(c):
    m = JumpMeasure.from_density(lambda x: np.full(len(x), 1.0), cutoff=c, envelope=1.0)
    assert abs(compensator_drift(m)[0]) < 1e-12


def test_atomic_second_moment_closed_form():
    m = JumpMeasure.atomic([0.1, -0.3], [2.0, 0.5], 1.0)
    assert m.second_moment() == pytest.approx(2.0 * 0.01 + 0.5 * 0.09, rel=1e-15)


# brownian ------------------------------------------------------------------

def test_brownian_single_step_variance():
    inc = brownian_increments(TimeGrid(1.0, 1), N, substream(4, "brownian", 0))
    x = inc[0]
    assert within(x.var(ddof=1), 1.0, math.sqrt(2.0 / (N - 1)))


def test_brownian_sum_variance_equals_horizon():
    grid = TimeGrid(2.5, 8)
    inc = brownian_increments(grid, N, substream(4, "brownian", 1))
    total = inc.sum(axis=0)
    assert within(total.var(ddof=1), 2.5, 2.5 * math.sqrt(2.0 / (N - 1)))
    step = inc[3]
    assert within(step.var(ddof=1), grid.dt, grid.dt * math.sqrt(2.0 / (N - 1)))


def test_brownian_zero_dimension():
    inc = brownian_increments(TimeGrid(1.0, 4), 0, substream(0, "brownian", 0))
    assert inc.shape == (4, 0)


def test_brownian_increments_uncorrelated():
    inc = brownian_increments(TimeGrid(1.0, 4), N, substream(8, "brownian", 0))
    c = np.mean(inc[0] * inc[2])
    assert within(c, 0.0, 0.25 / math.sqrt(N))


def test_refinement_keeps_old_nodes():
    coarse = brownian_path(TimeGrid(1.0, 16), 3, substream(42, "brownian", 7))
    fine = brownian_path(TimeGrid(1.0, 64), 3, substream(42, "brownian", 7))
    assert np.array_equal(fine[::4], coarse)


def test_timegrid_requires_power_of_two():
    with pytest.raises(InputDomainError):
        TimeGrid(1.0, 1000)
    g = TimeGrid(2.0, 8)
    assert np.all(np.diff(g.times) > 0)
    assert np.allclose(np.diff(g.times), g.dt)
    assert set(g.times).issubset(set(g.refine().times))


# levy_ito_path -------------------------------------------------------------

def test_levy_ito_pure_brownian_starts_at_zero():
    path = levy_ito_path([0.0], JumpMeasure.empty(1.0), TimeGrid(1.0, 32), substream(0, "brownian", 0))
    assert path[0, 0] == 0.0
    assert np.all(np.isfinite(path))


def test_levy_ito_deterministic_drift():
    grid = TimeGrid(1.5, 16)
    path = levy_ito_path(np.array([2.0]), JumpMeasure.empty(1.0), grid, substream(0, "brownian", 0))
    brown = brownian_path(grid, 1, substream(0, "brownian", 0))
    assert np.allclose(path - brown, 2.0 * grid.times[:, None], rtol=0, atol=1e-15)


def test_levy_ito_no_noise_exact():
    grid = TimeGrid(1.5, 8)
    path = levy_ito_path([2.0], JumpMeasure.empty(1.0), grid, substream(3, "brownian", 0), r=0)
    assert path[-1, 0] == 2.0 * 1.5


def test_levy_ito_compensated_atom_mean_zero():
    m = JumpMeasure.atomic([1.0], [2.0], 2.0)
    grid = TimeGrid(1.0, 4)
    n = 20_000
    ends = np.array([levy_ito_path([0.0], m, grid, substream(13, "jumps", i), r=0)[-1, 0]
                     for i in range(n)])
    assert within(ends.mean(), 0.0, ends.std(ddof=1) / math.sqrt(n))


def test_compensated_mean_zero_bundle():
    m = JumpMeasure.atomic([0.3, -0.1], [2.0, 1.0], 1.0)
    bundle = NoiseBundle.generate(5, TimeGrid(1.0, 8), m, r=1, path_count=20_000)
    jumps = np.zeros(bundle.path_count)
    np.add.at(jumps, bundle.jump_path, bundle.jump_mark[:, 0])
    comp = jumps - compensator_drift(m)[0] * 1.0
    assert within(comp.mean(), 0.0, comp.std(ddof=1) / math.sqrt(len(comp)), k=5)


def test_disjoint_increments_uncorrelated():
    m = JumpMeasure.atomic([0.5], [2.0], 1.0)
    grid = TimeGrid(1.0, 8)
    n = 20_000
    a = np.empty(n)
    b = np.empty(n)
    for i in range(n):
        path = levy_ito_path([0.0], m, grid, (substream(77, "brownian", i), substream(77, "jumps", i)))
        a[i] = path[4, 0] - path[0, 0]
        b[i] = path[8, 0] - path[4, 0]
    prod = (a - a.mean()) * (b - b.mean())
    assert within(prod.mean(), 0.0, prod.std(ddof=1) / math.sqrt(n))


# NoiseBundle ---------------------------------------------------------------

def _bundle(seed=3, m=16, paths=50, ids=None):
    meas = JumpMeasure.atomic([0.1, -0.2], [2.0, 1.0], 1.0)
    return NoiseBundle.generate(seed, TimeGrid(1.0, m), meas, r=2, path_count=None if ids is not None else paths,
                                path_ids=ids)


def test_bundle_determinism():
    a, b = _bundle(), _bundle()
    assert np.array_equal(a.brownian, b.brownian)
    assert np.array_equal(a.jump_time, b.jump_time)
    assert np.array_equal(a.jump_mark, b.jump_mark)
    assert np.array_equal(a.jump_path, b.jump_path)


def test_bundle_seed_changes_noise():
    assert not np.array_equal(_bundle(3).brownian, _bundle(4).brownian)


def test_bundle_path_substreams_independent_of_ensemble():
    full = _bundle(paths=50)
    sub = _bundle(ids=np.array([7, 31, 2]))
    assert np.array_equal(sub.brownian, full.brownian[[7, 31, 2]])
    for row, pid in enumerate([7, 31, 2]):
        t_sub, m_sub = sub.jumps_of(row)
        t_full, m_full = full.jumps_of(pid)
        assert np.array_equal(t_sub, t_full) and np.array_equal(m_sub, m_full)


def test_bundle_refinement_reuses_jumps():
    coarse, fine = _bundle(m=16), _bundle(m=64)
    assert np.array_equal(coarse.jump_time, fine.jump_time)
    assert np.array_equal(coarse.jump_mark, fine.jump_mark)
    # Brownian increments of the coarse grid are sums of fine increments.
    summed = fine.brownian.reshape(fine.path_count, 16, 4, 2).sum(axis=2)
    assert np.allclose(summed, coarse.brownian, atol=1e-14)


def test_bundle_jump_times_sorted_per_path():
    b = _bundle(paths=200)
    for row in range(b.path_count):
        t, _ = b.jumps_of(row)
        assert np.all(t > 0) and np.all(t <= 1.0) and np.all(np.diff(t) >= 0)


def test_bundle_save_load_roundtrip(tmp_path):
    b = _bundle()
    path = b.save(tmp_path / "bundle.npz")
    c = NoiseBundle.load(path, measure=b.measure)
    assert c.seed == b.seed and c.grid == b.grid
    for f in ("brownian", "jump_path", "jump_step", "jump_time", "jump_mark", "path_ids"):
        assert np.array_equal(getattr(c, f), getattr(b, f))
    assert c.key() == b.key()


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**63), path=st.integers(0, 10**6))
def test_substreams_reproducible(seed, path):
    a = substream(seed, "brownian", path).standard_normal(4)
    b = substream(seed, "brownian", path).standard_normal(4)
    c = substream(seed, "jumps", path).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
