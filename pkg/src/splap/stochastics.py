"""Brownian paths, time grids, and the noise load.

Reproducibility contract
------------------------
All randomness flows through the counter-based Philox bit generator and
a documented transform: 64-bit words are mapped to uniforms in (0, 1)
by ``u = ((word >> 11) + 0.5) * 2**-53`` and to standard normals by the
inverse normal CDF.  The same seed therefore reproduces the same
increments bit for bit, independent of call order or platform word
order.  Replicate streams are derived from a master seed with a
splitmix64 mix, which is a bijection of the stream index, so distinct
replicates can never collide.

Paths store i.i.d. fine-grid increments N(0, tau_fine).  Any coarser
increment is the ordered left-to-right partial sum of the stored fine
increments; nothing is ever re-sampled, so nested coarse/fine schemes
driven by one path see exactly the same Brownian motion.

Time grids come in two kinds.  Deterministic grids are the uniform
lattice m*T/M.  Random grids perturb each interior point uniformly in
[m*tau - tau/4, m*tau + tau/4] with tau = T/M, which keeps the points
strictly increasing and every step within [tau/2, 3*tau/2].  When a
random grid must live on a path's fine lattice, the perturbation is
drawn uniformly over the lattice points inside the same window (the
window is symmetric around m*tau, so the mean is unchanged).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .fem import FemOperators
from .mesh import Mesh

_MASK64 = (1 << 64) - 1

PATH_MAGIC = b"SPLAPW1"
TRAJECTORY_MAGIC = b"SPLAPT1"


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix_seed(master_seed: int, stream: int) -> int:
    """Derive the seed of stream ``stream`` from a master seed.

    splitmix64 is a bijection, so distinct streams give distinct seeds.
    """
    return _splitmix64(_splitmix64(master_seed & _MASK64) ^ (stream & _MASK64))


def _uniform01(seed: int, n: int) -> np.ndarray:
    """n uniforms in the open interval (0, 1) from a Philox counter stream."""
    raw = np.random.Philox(key=seed & _MASK64).random_raw(n)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def standard_normals(seed: int, n: int) -> np.ndarray:
    """n standard normals via the inverse-CDF transform of Philox uniforms."""
    return ndtri(_uniform01(seed, n))


@dataclass(frozen=True)
class NoisePath:
    """Fine-grid Brownian increments of K independent components.

    ``increments`` has shape (n_fine, K), row i being the increments of
    all components over (i*finest_step, (i+1)*finest_step], each
    distributed N(0, finest_step).
    """

    seed: int
    finest_step: float
    increments: np.ndarray

    @property
    def n_fine(self) -> int:
        return self.increments.shape[0]

    @property
    def n_components(self) -> int:
        return self.increments.shape[1]


def sample_path(seed: int, horizon: float, n_fine: int, n_components: int = 1) -> NoisePath:
    """Sample a path of n_fine i.i.d. increments N(0, horizon/n_fine)."""
    if n_fine < 1 or int(n_fine) != n_fine:
        raise ValueError(f"n_fine must be a positive integer, got {n_fine!r}")
    if n_components < 1 or int(n_components) != n_components:
        raise ValueError(f"n_components must be a positive integer, got {n_components!r}")
    if not (np.isfinite(horizon) and horizon > 0.0):
        raise ValueError(f"horizon must be positive, got {horizon!r}")
    n_fine = int(n_fine)
    n_components = int(n_components)
    tau_fine = horizon / n_fine
    z = standard_normals(seed, n_fine * n_components)
    inc = (z * np.sqrt(tau_fine)).reshape(n_fine, n_components)
    return NoisePath(seed=int(seed), finest_step=tau_fine, increments=inc)


def increment(path: NoisePath, a: int, b: int) -> np.ndarray:
    """Brownian increment over fine indices (a, b], as an ordered sum.

    Summation is strictly left to right so that splitting an interval
    and summing the parts in order reproduces the same bits.
    """
    if not (0 <= a <= b <= path.n_fine):
        raise ValueError(f"increment range ({a}, {b}] outside [0, {path.n_fine}]")
    out = np.zeros(path.n_components)
    inc = path.increments
    for i in range(int(a), int(b)):
        out += inc[i]
    return out


def dump_path(path: NoisePath) -> bytes:
    """Binary sidecar: magic, n_fine, K (little-endian u64), then the
    increments row-major as little-endian f64."""
    head = PATH_MAGIC + struct.pack("<QQ", path.n_fine, path.n_components)
    body = np.ascontiguousarray(path.increments, dtype="<f8").tobytes()
    return head + body


def load_path_increments(data: bytes) -> np.ndarray:
    """Read back the increments array from a path sidecar."""
    if data[: len(PATH_MAGIC)] != PATH_MAGIC:
        raise ValueError("bad path sidecar magic")
    off = len(PATH_MAGIC)
    n_fine, k = struct.unpack_from("<QQ", data, off)
    off += 16
    expected = off + 8 * n_fine * k
    if len(data) != expected:
        raise ValueError(f"path sidecar truncated: {len(data)} bytes, expected {expected}")
    inc = np.frombuffer(data, dtype="<f8", offset=off).reshape(n_fine, k)
    return inc.astype(np.float64)


# ---------------------------------------------------------------------------
# Time grids
# ---------------------------------------------------------------------------

_GRID_KINDS = ("deterministic", "random")


@dataclass(frozen=True)
class TimeGrid:
    """Partition 0 = t_0 < t_1 < ... < t_M of (approximately) [0, T].

    ``mean_step`` is tau = T/M of the nominal horizon; for random grids
    the last point only matches T up to tau/4.
    """

    points: np.ndarray
    mean_step: float
    kind: str

    @property
    def n_steps(self) -> int:
        return self.points.shape[0] - 1

    def steps(self) -> np.ndarray:
        return np.diff(self.points)


def _check_grid(grid: TimeGrid) -> TimeGrid:
    pts = grid.points
    if pts.ndim != 1 or pts.shape[0] < 2:
        raise ValueError("a time grid needs at least two points")
    if pts[0] != 0.0:
        raise ValueError(f"grid must start at 0, got {pts[0]!r}")
    if np.any(np.diff(pts) <= 0.0):
        raise ValueError("grid points must be strictly increasing")
    if grid.kind not in _GRID_KINDS:
        raise ValueError(f"unknown grid kind {grid.kind!r}")
    if not (np.isfinite(grid.mean_step) and grid.mean_step > 0.0):
        raise ValueError(f"mean_step must be positive, got {grid.mean_step!r}")
    if grid.kind == "random":
        tau = grid.mean_step
        m = np.arange(1, pts.shape[0])
        slack = 16.0 * np.finfo(float).eps * (1.0 + m * tau)
        if np.any(pts[1:] < m * tau - tau / 4.0 - slack) or np.any(pts[1:] > m * tau + tau / 4.0 + slack):
            raise ValueError("random grid point outside its sampling window")
        dt = np.diff(pts)
        # a step combines the rounding slack of both endpoints
        if np.any(dt < tau / 2.0 - 2.0 * slack) or np.any(dt > 1.5 * tau + 2.0 * slack):
            raise ValueError("random grid step outside [tau/2, 3 tau/2]")
    return grid


def uniform_time_grid(n_steps: int, horizon: float) -> TimeGrid:
    """Deterministic lattice t_m = m * horizon / n_steps."""
    if n_steps < 1 or int(n_steps) != n_steps:
        raise ValueError(f"n_steps must be a positive integer, got {n_steps!r}")
    if not (np.isfinite(horizon) and horizon > 0.0):
        raise ValueError(f"horizon must be positive, got {horizon!r}")
    n_steps = int(n_steps)
    points = np.arange(n_steps + 1) * horizon / n_steps
    return _check_grid(TimeGrid(points=points, mean_step=horizon / n_steps, kind="deterministic"))


def random_time_grid(seed: int, n_steps: int, horizon: float, snap_to: int | None = None) -> TimeGrid:
    """Random grid with t_m uniform in [m tau - tau/4, m tau + tau/4].

    With ``snap_to = n`` the perturbations are drawn uniformly over the
    points of the lattice with step horizon/n inside each window, so
    every grid point is exactly a lattice point (windows then reach at
    most horizon + tau/4, so the lattice must extend far enough when the
    grid is used against a sampled path).  Requires n to be a multiple
    of n_steps.
    """
    if n_steps < 1 or int(n_steps) != n_steps:
        raise ValueError(f"n_steps must be a positive integer, got {n_steps!r}")
    if not (np.isfinite(horizon) and horizon > 0.0):
        raise ValueError(f"horizon must be positive, got {horizon!r}")
    n_steps = int(n_steps)
    tau = horizon / n_steps
    u = _uniform01(seed, n_steps)
    m = np.arange(1, n_steps + 1)
    if snap_to is None:
        pts = m * tau + (u - 0.5) * (tau / 2.0)
        lo = m * tau - tau / 4.0
        hi = m * tau + tau / 4.0
        pts = np.minimum(np.maximum(pts, lo), hi)
    else:
        n = int(snap_to)
        if n < n_steps or n % n_steps != 0:
            raise ValueError(f"snap lattice ({n}) must be a multiple of n_steps ({n_steps})")
        rho = n // n_steps
        half = rho // 4
        count = 2 * half + 1
        offs = np.minimum((u * count).astype(np.int64), count - 1) - half
        idx = m * rho + offs
        pts = idx * horizon / n
    points = np.concatenate([[0.0], pts])
    return _check_grid(TimeGrid(points=points, mean_step=tau, kind="random"))


# ---------------------------------------------------------------------------
# Noise coefficient and load
# ---------------------------------------------------------------------------

_NOISE_MODES = ("additive", "multiplicative")


@dataclass(frozen=True)
class NoiseCoefficient:
    """Piecewise constant noise amplitude.

    ``values[j, k]`` multiplies the increment of Brownian component k on
    simplex j.  In multiplicative mode the load is further scaled by the
    shape function ``sigma`` evaluated at the current state, node by
    node.
    """

    values: np.ndarray
    mode: str = "additive"
    sigma: object = None

    @property
    def n_components(self) -> int:
        return self.values.shape[1]


def _sigma_growth_check(sigma) -> None:
    # Sampled screen for linear growth |sigma(x)| <= c (1 + |x|): the
    # growth ratio far out must not dwarf the ratio on moderate inputs.
    xs = np.concatenate([[0.0], np.logspace(-3, 6, 19), -np.logspace(-3, 6, 19)])
    ratios = []
    for x in xs:
        try:
            val = float(sigma(float(x)))
        except Exception as exc:
            raise ValueError(f"sigma failed to evaluate at {x!r}") from exc
        if not np.isfinite(val):
            raise ValueError(f"sigma({x!r}) is not finite")
        ratios.append(abs(val) / (1.0 + abs(x)))
    ratios = np.asarray(ratios)
    near = ratios[np.abs(xs) <= 1.0].max()
    if ratios.max() > 1e3 * max(1.0, near):
        raise ValueError("sigma fails the sampled linear-growth check")


def make_noise_coefficient(values: np.ndarray, mode: str = "additive", sigma=None) -> NoiseCoefficient:
    """Validate and build a NoiseCoefficient from a (ns, K) table."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError(f"noise values must be (ns, K), got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite noise coefficient values")
    if mode not in _NOISE_MODES:
        raise ValueError(f"noise mode must be one of {_NOISE_MODES}, got {mode!r}")
    if mode == "multiplicative":
        if sigma is None:
            raise ValueError("multiplicative noise requires a shape function sigma")
        _sigma_growth_check(sigma)
    return NoiseCoefficient(values=values, mode=mode, sigma=sigma)


def noise_from_function(mesh: Mesh, fn, n_components: int = 1, mode: str = "additive", sigma=None) -> NoiseCoefficient:
    """Piecewise constant coefficient from a spatial function.

    ``fn(x, y)`` is evaluated at simplex barycenters; the same spatial
    profile is used for every Brownian component.
    """
    v = mesh.vertices
    t = mesh.simplices
    bary = (v[t[:, 0]] + v[t[:, 1]] + v[t[:, 2]]) / 3.0
    vals = np.array([float(fn(float(x), float(y))) for x, y in bary])
    if not np.all(np.isfinite(vals)):
        j = int(np.where(~np.isfinite(vals))[0][0])
        raise ValueError(f"noise coefficient is not finite on simplex {j}")
    table = np.repeat(vals[:, None], int(n_components), axis=1)
    return make_noise_coefficient(table, mode=mode, sigma=sigma)


def noise_load(ops: FemOperators, phi: NoiseCoefficient, state: np.ndarray, d_w: np.ndarray) -> np.ndarray:
    """Broken right-hand side of one implicit step.

    Additive mode:        f = state + sum_k phi[:, k] dW_k
    Multiplicative mode:  f = state + sum_k phi[:, k] sigma(state) dW_k

    ``state`` enters through its exact broken embedding; the noise term
    is constant per simplex (additive) or scaled per broken node by
    sigma of the nodal state value (multiplicative).
    """
    state = np.asarray(state, dtype=float)
    d_w = np.asarray(d_w, dtype=float)
    ns = ops.n_simplices
    if phi.values.shape[0] != ns:
        raise ValueError(f"noise table has {phi.values.shape[0]} rows, mesh has {ns} simplices")
    if d_w.shape != (phi.n_components,):
        raise ValueError(f"increment must have shape ({phi.n_components},), got {d_w.shape}")
    if state.shape != (ops.n_vertices,):
        raise ValueError(f"state must have {ops.n_vertices} coefficients")
    base = state[ops.mesh.simplices.ravel()]
    amp = np.repeat(phi.values @ d_w, 3)
    if phi.mode == "additive":
        return base + amp
    sig = phi.sigma
    try:
        shaped = np.asarray(sig(base), dtype=float)
        if shaped.shape != base.shape:
            raise TypeError
    except Exception:
        shaped = np.array([float(sig(float(x))) for x in base])
    return base + amp * shaped
