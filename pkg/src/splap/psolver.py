"""Per-step convex minimization for the implicit p-Laplace update.

One implicit Euler step is the unique minimizer over the zero-boundary
P1 space of

    J(u) = 1/2 u' P u + tau * sum_j |S_j| * phi(g_j) - f' Pt u,

where g_j is the Euclidean norm of the gradient of u on simplex j and
phi is the scalar energy density with phi'(t) = (kappa + t)**(p-2) * t.
The first-order condition of J is exactly the variational equality of
the time step with tensor S, so minimizing J and solving the nonlinear
system are two routes to the same point.  For kappa = 0 the density
reduces to phi(t) = t**p / p, i.e. the plain p-Dirichlet energy.

A ``componentwise`` formulation is also available in which the energy
sums phi(|D1 u|) + phi(|D2 u|) per simplex instead of using the
Euclidean norm of the full gradient; it is kept behind a switch for
comparison purposes and is not the default.

Solver: boundary unknowns are eliminated through the restriction
matrix and the reduced problem is solved by damped Newton with Armijo
backtracking.  For p < 2 the energy is not twice differentiable where
a gradient vanishes, so the solve passes through a decreasing sequence
of smoothing parameters eps (the density is evaluated at
sqrt(eps**2 + g**2)), warm-starting each level and stopping at the
floor eps = 1e-6, where the final gradient norm is measured and
reported.  For p >= 2 no smoothing is needed and the schedule
collapses to eps = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .constitutive import GrowthParams, tensor_s_rows
from .fem import FemOperators

EPS_SCHEDULE = (1e-2, 1e-4, 1e-6)
ARMIJO_C1 = 1e-4
HESSIAN_SHIFT = 1e-12
DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 200

_FORMULATIONS = ("euclidean", "componentwise")


class SingularityError(ArithmeticError):
    """Second derivative of the energy requested at a singular point."""


class ConvergenceError(RuntimeError):
    """Newton failed to reach the requested tolerance; carries a report."""

    def __init__(self, message: str, report: "SolveReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass
class SolveReport:
    """Diagnostics of one per-step solve."""

    iterations: int
    final_grad_norm: float
    continuation_levels: list[float] = field(default_factory=list)
    objective_trace: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "iterations": int(self.iterations),
            "final_grad_norm": float(self.final_grad_norm),
            "continuation_levels": [float(e) for e in self.continuation_levels],
            "objective_trace": [float(v) for v in self.objective_trace],
        }


@dataclass(frozen=True)
class StepProblem:
    """One implicit step: operators, law, step size, broken forcing."""

    ops: FemOperators
    params: GrowthParams
    tau_m: float
    forcing: np.ndarray
    formulation: str = "euclidean"

    def __post_init__(self) -> None:
        if not (np.isfinite(self.tau_m) and self.tau_m > 0.0):
            raise ValueError(f"tau_m must be positive, got {self.tau_m!r}")
        if self.formulation not in _FORMULATIONS:
            raise ValueError(f"formulation must be one of {_FORMULATIONS}, got {self.formulation!r}")
        forcing = np.asarray(self.forcing, dtype=float)
        if forcing.shape != (3 * self.ops.n_simplices,):
            raise ValueError(
                f"forcing must be a broken vector of length {3 * self.ops.n_simplices}, got shape {forcing.shape}"
            )
        if not np.all(np.isfinite(forcing)):
            raise ValueError("non-finite forcing")
        object.__setattr__(self, "forcing", forcing)
        # f enters the objective only through Pt' f.
        object.__setattr__(self, "_load", self.ops.broken_mass.T @ forcing)

    @property
    def load(self) -> np.ndarray:
        return self._load


def _energy_density(t: np.ndarray, p: float, kappa: float) -> np.ndarray:
    """phi(t) with phi'(t) = (kappa + t)**(p-2) t and phi(0) = 0."""
    if kappa == 0.0:
        return t**p / p
    kt = kappa + t
    return (kt**p - kappa**p) / p - kappa * (kt ** (p - 1.0) - kappa ** (p - 1.0)) / (p - 1.0)


def _smoothed_norms(prob: StepProblem, u_full: np.ndarray, eps: float):
    """Per-simplex gradient components and smoothed norms.

    Returns (g1, g2, norms) where norms has one column per energy term:
    a single column holding sqrt(eps^2 + g1^2 + g2^2) for the euclidean
    formulation, two columns sqrt(eps^2 + gi^2) componentwise.
    """
    if not (np.isfinite(eps) and eps >= 0.0):
        raise ValueError(f"eps must be nonnegative, got {eps!r}")
    d1, d2 = prob.ops.dgrad
    g1 = d1 @ u_full
    g2 = d2 @ u_full
    if prob.formulation == "euclidean":
        norms = np.sqrt(eps * eps + g1 * g1 + g2 * g2)[:, None]
    else:
        norms = np.column_stack([np.sqrt(eps * eps + g1 * g1), np.sqrt(eps * eps + g2 * g2)])
    return g1, g2, norms


def _check_interior(prob: StepProblem, u_interior: np.ndarray) -> np.ndarray:
    u_interior = np.asarray(u_interior, dtype=float)
    if u_interior.shape != (prob.ops.n_interior,):
        raise ValueError(f"expected {prob.ops.n_interior} interior coefficients, got shape {u_interior.shape}")
    return u_interior


def objective(prob: StepProblem, u_interior: np.ndarray, eps: float = 0.0) -> float:
    """J(u) at u = R' u_interior, optionally with eps-smoothed density."""
    u_interior = _check_interior(prob, u_interior)
    u = prob.ops.prolong(u_interior)
    p, kappa = prob.params.p, prob.params.kappa
    _, _, norms = _smoothed_norms(prob, u, eps)
    with np.errstate(over="ignore"):
        density = _energy_density(norms, p, kappa).sum(axis=1)
        quad = 0.5 * float(u @ (prob.ops.mass @ u))
        return quad + prob.tau_m * float(prob.ops.areas @ density) - float(prob.load @ u)


def _raise_if_singular(norms: np.ndarray, p: float, eps: float) -> None:
    if eps == 0.0 and p < 2.0 and np.any(norms == 0.0):
        raise SingularityError(
            "energy density not differentiable: p < 2, eps = 0, and a vanishing gradient norm"
        )


def gradient(prob: StepProblem, u_interior: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """Gradient of objective(., eps) with respect to the interior unknowns."""
    u_interior = _check_interior(prob, u_interior)
    u = prob.ops.prolong(u_interior)
    p, kappa = prob.params.p, prob.params.kappa
    d1, d2 = prob.ops.dgrad
    g1, g2, norms = _smoothed_norms(prob, u, eps)
    _raise_if_singular(norms, p, eps)
    scale = (kappa + norms) ** (p - 2.0)
    if prob.formulation == "euclidean":
        w1 = scale[:, 0] * g1
        w2 = scale[:, 0] * g2
    else:
        w1 = scale[:, 0] * g1
        w2 = scale[:, 1] * g2
    areas = prob.ops.areas
    r = prob.ops.mass @ u + prob.tau_m * (d1.T @ (areas * w1) + d2.T @ (areas * w2)) - prob.load
    return r[prob.ops.interior]


def _hessian(prob: StepProblem, u_interior: np.ndarray, eps: float) -> sp.csc_matrix:
    """Interior Hessian of objective(., eps) as a sparse CSC matrix."""
    u = prob.ops.prolong(_check_interior(prob, u_interior))
    p, kappa = prob.params.p, prob.params.kappa
    d1, d2 = prob.ops.dgrad
    g1, g2, norms = _smoothed_norms(prob, u, eps)
    _raise_if_singular(norms, p, eps)
    base = kappa + norms
    a = base ** (p - 2.0)
    b = np.zeros_like(norms)
    pos = norms > 0.0
    b[pos] = (p - 2.0) * base[pos] ** (p - 3.0) / norms[pos]
    areas = prob.ops.areas
    if prob.formulation == "euclidean":
        a0, b0 = a[:, 0], b[:, 0]
        w11 = areas * (a0 + b0 * g1 * g1)
        w22 = areas * (a0 + b0 * g2 * g2)
        w12 = areas * (b0 * g1 * g2)
        h = (
            d1.T @ d1.multiply(w11[:, None])
            + d2.T @ d2.multiply(w22[:, None])
            + d1.T @ d2.multiply(w12[:, None])
            + d2.T @ d1.multiply(w12[:, None])
        )
    else:
        w11 = areas * (a[:, 0] + b[:, 0] * g1 * g1)
        w22 = areas * (a[:, 1] + b[:, 1] * g2 * g2)
        h = d1.T @ d1.multiply(w11[:, None]) + d2.T @ d2.multiply(w22[:, None])
    full = prob.ops.mass + prob.tau_m * h
    interior = prob.ops.interior
    return full.tocsr()[interior, :].tocsc()[:, interior]


def kkt_residual(prob: StepProblem, u_interior: np.ndarray, eps: float = 0.0) -> float:
    """Interior residual norm of the variational form of the step.

    Measures || R (P u + tau sum_i Di' diag(areas) s_i - Pt' f) || with
    s_i the i-th component of S(grad u) per simplex.  With eps = 0 the
    unsmoothed tensor is used (continuous zero extension at vanishing
    gradients); with eps > 0 the tensor of the eps-smoothed energy, the
    form whose residual the solver drives below tolerance for p < 2.
    """
    if not (np.isfinite(eps) and eps >= 0.0):
        raise ValueError(f"eps must be nonnegative, got {eps!r}")
    u_interior = _check_interior(prob, u_interior)
    u = prob.ops.prolong(u_interior)
    d1, d2 = prob.ops.dgrad
    g = np.column_stack([d1 @ u, d2 @ u])
    if eps == 0.0:
        s = tensor_s_rows(g, prob.params)
    else:
        base = prob.params.kappa + np.sqrt(eps * eps + np.sum(g * g, axis=1))
        s = base[:, None] ** (prob.params.p - 2.0) * g
    areas = prob.ops.areas
    r = prob.ops.mass @ u + prob.tau_m * (d1.T @ (areas * s[:, 0]) + d2.T @ (areas * s[:, 1])) - prob.load
    return float(np.linalg.norm(r[prob.ops.interior]))


def _interior_mass(prob: StepProblem) -> sp.csc_matrix:
    interior = prob.ops.interior
    return prob.ops.mass.tocsr()[interior, :].tocsc()[:, interior]


def _newton_direction(h: sp.csc_matrix, g: np.ndarray, mass_ii: sp.csc_matrix) -> np.ndarray:
    """Solve h d = -g; on factorization trouble retry with a mass shift."""
    d = None
    try:
        d = splu(h).solve(-g)
    except RuntimeError:
        d = None
    if d is None or not np.all(np.isfinite(d)) or float(g @ d) >= 0.0:
        shifted = (h + HESSIAN_SHIFT * mass_ii).tocsc()
        try:
            d = splu(shifted).solve(-g)
        except RuntimeError as exc:
            raise ConvergenceError("Hessian factorization failed") from exc
        if not np.all(np.isfinite(d)) or float(g @ d) >= 0.0:
            raise ConvergenceError("no descent direction")
    return d


def _minimize_level(prob, u, eps, target, max_iter, trace, mass_ii):
    """Damped Newton at a fixed smoothing level. Returns (u, iterations)."""
    g = gradient(prob, u, eps)
    f = objective(prob, u, eps)
    trace.append(f)
    it = 0
    while True:
        gn = float(np.linalg.norm(g))
        if gn <= target:
            return u, it
        if it >= max_iter:
            exc = ConvergenceError(f"iteration cap {max_iter} exceeded at eps={eps:g} (|grad|={gn:.3e})")
            exc.iterations_done = it
            exc.grad_norm = gn
            raise exc
        d = _newton_direction(_hessian(prob, u, eps), g, mass_ii)
        slope = float(g @ d)
        if abs(slope) * 0.5 < 1e-15 * (1.0 + abs(f)):
            # Newton's own predicted decrease is below the float
            # resolution of J: the minimum is resolved to machine
            # precision and further line searches only sample roundoff.
            return u, it
        alpha = 1.0
        while True:
            trial = u + alpha * d
            ft = objective(prob, trial, eps)
            if np.isfinite(ft) and ft <= f + ARMIJO_C1 * alpha * slope:
                break
            alpha *= 0.5
            if alpha < 2.0**-60:
                exc = ConvergenceError(f"line search stalled at eps={eps:g}")
                exc.iterations_done = it
                exc.grad_norm = gn
                raise exc
        u = trial
        f = ft
        trace.append(f)
        it += 1
        g = gradient(prob, u, eps)


def _schedule(params: GrowthParams) -> list[float]:
    if params.p >= 2.0:
        return [0.0]
    if params.eps_reg > 0.0:
        return [e for e in EPS_SCHEDULE if e > params.eps_reg] + [params.eps_reg]
    return list(EPS_SCHEDULE)


def _presolve(prob: StepProblem) -> np.ndarray:
    """Minimizer of the p=2 surrogate step (P + tau A) u = load."""
    d1, d2 = prob.ops.dgrad
    w = sp.diags(prob.ops.areas)
    full = prob.ops.mass + prob.tau_m * (d1.T @ w @ d1 + d2.T @ w @ d2)
    interior = prob.ops.interior
    sys = full.tocsr()[interior, :].tocsc()[:, interior]
    return splu(sys.tocsc()).solve(prob.load[interior])


def solve_step(
    prob: StepProblem,
    warm_start: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[np.ndarray, SolveReport]:
    """Minimize the step objective from a warm start.

    Stops when the gradient norm at the final smoothing level drops
    below ``tol * (1 + |grad at warm_start|)``, or earlier when the
    predicted Newton decrease falls below the float resolution of the
    objective (the minimizer is then resolved to machine precision and
    no representable descent remains).  Returns the interior
    coefficient vector and a SolveReport; raises ConvergenceError (with
    the report attached) if an iteration cap is exceeded.
    """
    if not (np.isfinite(tol) and tol > 0.0):
        raise ValueError(f"tol must be positive, got {tol!r}")
    warm_start = _check_interior(prob, warm_start)
    levels = _schedule(prob.params)
    mass_ii = _interior_mass(prob)

    # A p=2 surrogate solve is a far better starting point than a cold
    # warm start (large steps otherwise send Newton on a slow trek
    # through the boundary layer); keep whichever candidate scores the
    # lower objective at the first smoothing level.
    u = warm_start.astype(float).copy()
    pre = _presolve(prob)
    if objective(prob, pre, levels[0]) < objective(prob, u, levels[0]):
        u = pre
    trace: list[float] = []
    levels_used: list[float] = []
    total_iterations = 0
    for k, eps in enumerate(levels):
        last = k == len(levels) - 1
        anchor = warm_start if last else u
        try:
            target = tol * (1.0 + float(np.linalg.norm(gradient(prob, anchor, eps))))
            u, it = _minimize_level(prob, u, eps, target, max_iter, trace, mass_ii)
        except ConvergenceError as exc:
            exc.report = SolveReport(
                iterations=total_iterations + getattr(exc, "iterations_done", 0),
                final_grad_norm=getattr(exc, "grad_norm", float("nan")),
                continuation_levels=levels_used + [eps],
                objective_trace=trace,
            )
            raise
        levels_used.append(eps)
        total_iterations += it

    final_eps = levels_used[-1]
    final_norm = float(np.linalg.norm(gradient(prob, u, final_eps)))
    report = SolveReport(
        iterations=total_iterations,
        final_grad_norm=final_norm,
        continuation_levels=levels_used,
        objective_trace=trace,
    )
    return u, report
