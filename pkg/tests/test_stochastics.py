"""Tests for Brownian paths, time grids, and the noise coefficient."""

import numpy as np
import pytest
from scipy import stats

from splap.fem import assemble, broken_embed
from splap.mesh import generate_unit_square
from splap.stochastics import (
    dump_path,
    increment,
    load_path_increments,
    make_noise_coefficient,
    mix_seed,
    noise_from_function,
    noise_load,
    random_time_grid,
    sample_path,
    standard_normals,
    uniform_time_grid,
)


def test_sample_path_deterministic_in_seed():
    a = sample_path(123, 1.0, 64, 2)
    b = sample_path(123, 1.0, 64, 2)
    assert np.array_equal(a.increments, b.increments)
    c = sample_path(124, 1.0, 64, 2)
    assert not np.array_equal(a.increments, c.increments)


def test_sample_path_shapes_and_validation():
    p = sample_path(1, 2.0, 16, 3)
    assert p.increments.shape == (16, 3)
    assert p.finest_step == 2.0 / 16
    with pytest.raises(ValueError):
        sample_path(1, 1.0, 0, 1)
    with pytest.raises(ValueError):
        sample_path(1, -1.0, 8, 1)
    with pytest.raises(ValueError):
        sample_path(1, 1.0, 8, 0)


def test_terminal_value_moments():
    # W(T) over many seeds: mean within 4 SE of 0, variance within 5% of T
    horizon = 1.0
    n_seeds = 100_000
    w_t = np.array([increment(sample_path(s, horizon, 8, 1), 0, 8)[0] for s in range(n_seeds)])
    se = np.sqrt(horizon / n_seeds)
    assert abs(w_t.mean()) < 4.0 * se
    assert abs(w_t.var() - horizon) < 0.05 * horizon


def test_fine_increments_standard_normal():
    # KS statistic of normalized increments against N(0,1), 1e5 samples
    path = sample_path(77, 1.0, 100_000, 1)
    z = path.increments[:, 0] / np.sqrt(path.finest_step)
    stat = stats.kstest(z, "norm").statistic
    critical_1pct = 1.63 / np.sqrt(z.size)
    assert stat < critical_1pct


def test_standard_normals_deterministic():
    assert np.array_equal(standard_normals(5, 100), standard_normals(5, 100))
    assert not np.array_equal(standard_normals(5, 100), standard_normals(6, 100))


def test_increment_examples():
    path = sample_path(3, 1.0, 32, 2)
    assert np.array_equal(increment(path, 7, 7), np.zeros(2))
    total = increment(path, 0, 32)
    assert np.array_equal(total, path.increments.sum(axis=0))


def test_increment_additivity_bit_exact():
    # increment(a, c) equals increment(a, b) + increment(b, c) when the
    # summation order is identical; the implementation sums left to right
    rng = np.random.default_rng(10)
    for seed in range(50):
        path = sample_path(seed, 1.0, 64, 1)
        a, b, c = sorted(rng.integers(0, 65, size=3))
        left = increment(path, a, b)
        right = increment(path, b, c)
        manual = left.copy()
        for i in range(b, c):
            manual = manual + path.increments[i]
        assert np.array_equal(increment(path, a, c), manual)
        del right


def test_nested_sums_bit_exact():
    # coarse increments equal ordered sums of fine increments, bit for bit
    for seed in range(100):
        path = sample_path(seed, 1.0, 64, 1)
        for ratio in (2, 4, 8, 16):
            n_coarse = 64 // ratio
            for m in range(n_coarse):
                coarse = increment(path, m * ratio, (m + 1) * ratio)
                acc = np.zeros(1)
                for i in range(m * ratio, (m + 1) * ratio):
                    acc = acc + path.increments[i]
                assert np.array_equal(coarse, acc)


def test_increment_rejects_bad_indices():
    path = sample_path(1, 1.0, 8, 1)
    with pytest.raises(ValueError):
        increment(path, -1, 4)
    with pytest.raises(ValueError):
        increment(path, 0, 9)
    with pytest.raises(ValueError):
        increment(path, 5, 4)


def test_mix_seed_streams_distinct():
    master = 1
    seeds = {mix_seed(master, r) for r in range(10_000)}
    assert len(seeds) == 10_000
    assert mix_seed(2, 0) != mix_seed(1, 0)
    assert mix_seed(master, 7) == mix_seed(master, 7)


def test_dump_load_path_round_trip():
    path = sample_path(9, 0.5, 128, 2)
    data = dump_path(path)
    assert np.array_equal(load_path_increments(data), path.increments)
    with pytest.raises(ValueError):
        load_path_increments(b"garbage")


def test_uniform_grid_examples():
    g = uniform_time_grid(4, 1.0)
    assert np.allclose(g.points, [0.0, 0.25, 0.5, 0.75, 1.0], rtol=0, atol=0)
    assert g.kind == "deterministic"
    assert g.n_steps == 4
    assert np.allclose(g.steps(), 0.25)
    assert g.mean_step == 0.25


def test_uniform_grid_nesting():
    coarse = uniform_time_grid(4, 1.0)
    fine = uniform_time_grid(16, 1.0)
    # power of two refinements nest exactly
    assert np.all(np.isin(coarse.points, fine.points))


def test_uniform_grid_validation():
    with pytest.raises(ValueError):
        uniform_time_grid(0, 1.0)
    with pytest.raises(ValueError):
        uniform_time_grid(4, 0.0)


def test_random_grid_law():
    # windows t_m in [m tau - tau/4, m tau + tau/4], steps in [tau/2, 3 tau/2]
    n_steps, horizon = 4, 1.0
    tau = horizon / n_steps
    first = []
    for seed in range(100_000):
        g = random_time_grid(seed, n_steps, horizon)
        m = np.arange(1, n_steps + 1)
        assert np.all(g.points[1:] >= m * tau - tau / 4 - 1e-12)
        assert np.all(g.points[1:] <= m * tau + tau / 4 + 1e-12)
        steps = g.steps()
        assert np.all(steps >= tau / 2 - 1e-12)
        assert np.all(steps <= 3 * tau / 2 + 1e-12)
        assert g.kind == "random"
        first.append(g.points[1])
    first = np.asarray(first)
    # mean of t_1 is tau; uniform on an interval of width tau/2
    se = (tau / 2) / np.sqrt(12.0) / np.sqrt(first.size)
    assert abs(first.mean() - tau) < 4.0 * se


def test_random_grid_deterministic_in_seed():
    a = random_time_grid(5, 8, 1.0)
    b = random_time_grid(5, 8, 1.0)
    assert np.array_equal(a.points, b.points)


def test_random_grid_single_step():
    # M = 1: single interior point in [T - T/4, T + T/4]
    for seed in range(200):
        g = random_time_grid(seed, 1, 1.0)
        assert g.points.shape == (2,)
        assert 0.75 - 1e-12 <= g.points[1] <= 1.25 + 1e-12


def test_random_grid_snapped_lands_on_lattice():
    # snapped grids live on the path lattice so increments stay exact sums
    n_lattice = 64
    for seed in range(100):
        g = random_time_grid(seed, 4, 1.0, snap_to=n_lattice)
        idx = g.points * n_lattice
        assert np.allclose(idx, np.rint(idx), atol=1e-9)
        tau = 1.0 / 4
        m = np.arange(1, 5)
        assert np.all(g.points[1:] >= m * tau - tau / 4 - 1e-12)
        assert np.all(g.points[1:] <= m * tau + tau / 4 + 1e-12)


def test_noise_coefficient_validation():
    values = np.ones((8, 1))
    phi = make_noise_coefficient(values)
    assert phi.mode == "additive"
    assert phi.n_components == 1
    with pytest.raises(ValueError):
        make_noise_coefficient(np.full((8, 1), np.nan))
    with pytest.raises(ValueError):
        make_noise_coefficient(values, mode="bogus")
    with pytest.raises(ValueError):
        make_noise_coefficient(values, mode="multiplicative")  # sigma required


def test_noise_from_function_radial():
    # |x|^{-1/2} at barycenters: finite and positive away from the origin
    m = generate_unit_square(32)
    phi = noise_from_function(m, lambda x, y: (x * x + y * y) ** -0.25)
    assert phi.values.shape == (m.n_simplices, 1)
    assert np.all(np.isfinite(phi.values))
    assert np.all(phi.values > 0.0)


def test_noise_load_zero_increment():
    m = generate_unit_square(3)
    ops = assemble(m)
    phi = noise_from_function(m, lambda x, y: 1.0 + x)
    rng = np.random.default_rng(8)
    state = rng.standard_normal(m.n_vertices)
    out = noise_load(ops, phi, state, np.zeros(1))
    assert np.array_equal(out, broken_embed(ops, state))


def test_noise_load_additive_example():
    # state 0, phi = 1, dW = 0.5: every broken coefficient is 0.5
    m = generate_unit_square(2)
    ops = assemble(m)
    phi = make_noise_coefficient(np.ones((m.n_simplices, 1)))
    out = noise_load(ops, phi, np.zeros(m.n_vertices), np.array([0.5]))
    assert np.all(out == 0.5)


def test_noise_load_multiplicative_nodewise():
    m = generate_unit_square(2)
    ops = assemble(m)
    phi = make_noise_coefficient(
        2.0 * np.ones((m.n_simplices, 1)), mode="multiplicative", sigma=lambda v: v
    )
    rng = np.random.default_rng(12)
    state = rng.standard_normal(m.n_vertices)
    dw = np.array([0.25])
    out = noise_load(ops, phi, state, dw)
    base = broken_embed(ops, state)
    assert np.allclose(out, base + 2.0 * 0.25 * base, rtol=1e-14)


def test_noise_load_dimension_checks():
    m = generate_unit_square(2)
    ops = assemble(m)
    phi = make_noise_coefficient(np.ones((m.n_simplices, 1)))
    with pytest.raises(ValueError):
        noise_load(ops, phi, np.zeros(m.n_vertices + 2), np.zeros(1))
    with pytest.raises(ValueError):
        noise_load(ops, phi, np.zeros(m.n_vertices), np.zeros(2))


def test_multiplicative_sigma_growth_screen():
    # the probe overflows exp on purpose; that is the signal being screened
    with np.errstate(over="ignore"), pytest.raises(ValueError):
        make_noise_coefficient(
            np.ones((4, 1)), mode="multiplicative", sigma=lambda v: np.exp(v)
        )
