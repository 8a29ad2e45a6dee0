"""Backward-equation solvers on grid paths.

Two routes to the pair (Y, Z): the closed-form benchmark solution of the
linear system (zero drift, unit diffusion, generator ``h = x``, terminal
``g = x``), and a least-squares regression backward Euler scheme for
Lipschitz generators.  The piecewise-constant aggregation of Z over a coarse
grid mirrors the object simulation schemes actually work with.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .decouple import GridFunctional
from .estimators import BasisSpec, ConditionalEstimator, cond_expect, polynomial_features
from .forward_sde import ForwardSolution
from .grid_paths import PathBundle, TimeGrid

__all__ = [
    "GeneratorSpec",
    "BsdeGridSolution",
    "ZpiResult",
    "closed_form_example",
    "regression_backward_euler",
    "zpi_aggregate",
    "spot_check_generator",
]


@dataclass(frozen=True)
class GeneratorSpec:
    """Generator ``f(t, x, y, z)`` with its declared growth constants.

    ``theta`` is the z-growth exponent of the Lipschitz template
    ``|f(..., y0, z0) - f(..., y1, z1)| <= L_y |y0-y1|
    + L_z [1 + |z0| + |z1|]^theta |z0-z1|``; the template is spot-checked on
    random tuples, not verified symbolically.
    """

    f: Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    L_y: float
    L_z: float
    terminal: GridFunctional
    theta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.L_y < 0 or self.L_z < 0:
            raise ValueError("growth constants must be nonnegative")


@dataclass
class BsdeGridSolution:
    """Per-path arrays Y on the nodes and Z on the intervals."""

    grid: TimeGrid
    Y: np.ndarray  # [M, N+1]
    Z: np.ndarray  # [M, N, d]
    method: str
    diagnostics: dict = field(default_factory=dict)


def spot_check_generator(gen: GeneratorSpec, seed: int = 0, samples: int = 256,
                         d: int = 1, scale: float = 3.0) -> float:
    """Worst violation of the declared growth template on random tuples."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        t = float(rng.uniform(0, 1))
        x = rng.normal(size=(1, d)) * scale
        y0, y1 = rng.normal(size=2) * scale
        z0 = rng.normal(size=(1, d)) * scale
        z1 = rng.normal(size=(1, d)) * scale
        f0 = np.asarray(gen.f(t, x, np.array([y0]), z0)).item()
        f1 = np.asarray(gen.f(t, x, np.array([y1]), z1)).item()
        lhs = abs(f0 - f1)
        zn0, zn1 = np.linalg.norm(z0), np.linalg.norm(z1)
        bound = (gen.L_y * abs(y0 - y1)
                 + gen.L_z * (1 + zn0 + zn1) ** gen.theta * np.linalg.norm(z0 - z1))
        worst = max(worst, lhs - bound)
    return worst


def closed_form_example(bundle: PathBundle, x0: float = 0.0) -> BsdeGridSolution:
    """Exact solution of the linear benchmark on the bundle's paths.

    Requires d = 1 and the preset coefficients (zero drift, unit diffusion,
    generator ``h = x``, terminal ``g = x``); then ``Y_r = X_r (1 + T - r)``
    and ``Z_r = 1 + T - r`` is deterministic.
    """
    if bundle.dimension != 1:
        raise ValueError("closed-form benchmark is one-dimensional")
    grid = bundle.grid
    T = grid.horizon
    w = bundle.brownian()[:, :, 0]
    factor = 1.0 + T - grid.nodes
    Y = (x0 + w) * factor[None, :]
    Z = np.broadcast_to(factor[:-1, None], (bundle.num_paths, grid.n_steps, 1)).copy()
    return BsdeGridSolution(grid=grid, Y=Y, Z=Z, method="closed_form")


def _node_design(x: np.ndarray, degree: int):
    """Standardized polynomial design at one node; constant states collapse
    to the intercept."""
    sd = x.std(axis=0)
    keep = sd > 0
    if keep.any():
        xs = (x[:, keep] - x[:, keep].mean(axis=0)) / sd[keep]
        return polynomial_features(xs, degree)
    return np.ones((x.shape[0], 1))


def _fit(A: np.ndarray, targets: np.ndarray, diagnostics: dict):
    G = A.T @ A
    sv = np.linalg.svd(G, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    diagnostics.setdefault("condition_numbers", []).append(cond)
    if not np.isfinite(cond) or cond > 1e12:
        lam = 1e-8 * float(np.trace(G)) / G.shape[0]
        G = G + lam * np.eye(G.shape[0])
        diagnostics["ridge_fallbacks"] = diagnostics.get("ridge_fallbacks", 0) + 1
    coef = np.linalg.solve(G, A.T @ targets)
    return A @ coef


def regression_backward_euler(gen: GeneratorSpec, forward: ForwardSolution,
                              bundle: PathBundle, basis: BasisSpec,
                              picard_iters: int = 3, y_bound: float = 1e6) -> BsdeGridSolution:
    """Least-squares backward Euler scheme for Lipschitz generators.

    Backward recursion from ``Y_N = xi``: Z on each interval is the regressed
    covariation ``E[(Y_{k+1} - E[Y_{k+1}|X_k]) dW_k | X_k] / dt`` (centering
    is a pure variance reduction: the subtracted term has zero conditional
    expectation against the increment), and Y solves the implicit driver
    equation by Picard sweeps.
    """
    if gen.theta > 0:
        raise ValueError("theta > 0 generators are representable but not solvable by this "
                         "scheme; only theta = 0 (Lipschitz in z) is supported")
    grid = forward.grid
    dt = grid.dt
    if np.max(dt) * gen.L_y >= 1.0:
        raise ValueError("grid too coarse: dt * L_y must be < 1 for the Picard step to contract")
    X = forward.states
    M, _, d = X.shape
    n_basis = len(polynomial_features(np.zeros((1, d)), basis.degree)[0])
    if n_basis >= M / 10:
        raise ValueError("basis size too large for the path count (overfitting guard)")

    diagnostics: dict = {"truncations": 0}
    Y = np.empty((M, grid.n_steps + 1))
    Z = np.empty((M, grid.n_steps, d))
    Y[:, -1] = gen.terminal(bundle.increments, grid)

    for k in range(grid.n_steps - 1, -1, -1):
        A = _node_design(X[:, k, :], basis.degree)
        m_next = _fit(A, Y[:, k + 1], diagnostics)
        resid = Y[:, k + 1] - m_next
        zk = _fit(A, resid[:, None] * bundle.increments[:, k, :], diagnostics) / dt[k]
        y = m_next
        t = float(grid.nodes[k])
        for _ in range(picard_iters):
            y = m_next + dt[k] * gen.f(t, X[:, k, :], y, zk)
        over = np.abs(y) > y_bound
        if over.any():
            diagnostics["truncations"] += int(over.sum())
            y = np.clip(y, -y_bound, y_bound)
        Y[:, k] = y
        Z[:, k, :] = zk

    diagnostics["max_condition_number"] = float(np.max(diagnostics["condition_numbers"]))
    del diagnostics["condition_numbers"]
    return BsdeGridSolution(grid=grid, Y=Y, Z=Z, method="regression", diagnostics=diagnostics)


def export_solution_csv(solution: BsdeGridSolution, path: str,
                        max_paths: int | None = None) -> None:
    """Rows (path, node, t, Y, Z_1..Z_d); Z columns are empty at the last node."""
    import csv

    grid = solution.grid
    d = solution.Z.shape[2]
    m = solution.Y.shape[0] if max_paths is None else min(max_paths, solution.Y.shape[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "node", "t", "Y"] + [f"Z_{j + 1}" for j in range(d)])
        for i in range(m):
            for k in range(grid.n_steps + 1):
                z = [repr(float(solution.Z[i, k, j])) for j in range(d)] \
                    if k < grid.n_steps else [""] * d
                writer.writerow([i, k, repr(float(grid.nodes[k])),
                                 repr(float(solution.Y[i, k]))] + z)


def solution_summary(solution: BsdeGridSolution,
                     reference: BsdeGridSolution | None = None) -> dict:
    """JSON-ready summary: diagnostics plus RMS errors against a reference."""
    out = {"method": solution.method, "paths": int(solution.Y.shape[0]),
           "nodes": int(solution.Y.shape[1]), "diagnostics": solution.diagnostics}
    if reference is not None:
        out["rms_y_per_node"] = np.sqrt(((solution.Y - reference.Y) ** 2)
                                        .mean(axis=0)).tolist()
        out["rms_z_per_node"] = np.sqrt(((solution.Z - reference.Z) ** 2)
                                        .mean(axis=(0, 2))).tolist()
    return out


@dataclass
class ZpiResult:
    """Piecewise-constant Z over a coarse grid (one value per coarse interval)."""

    coarse: TimeGrid
    values: np.ndarray  # [M, n_coarse_steps, d]

    def at(self, path: int, interval: int) -> np.ndarray:
        return self.values[path, interval]


def zpi_aggregate(solution: BsdeGridSolution, coarse: TimeGrid,
                  conditioning_states: np.ndarray,
                  estimator: ConditionalEstimator | None = None,
                  interval_means: np.ndarray | None = None) -> ZpiResult:
    """Conditional time-averages of Z, held constant per coarse interval.

    For each coarse interval the time-average of Z over its fine intervals is
    projected on the state at the interval's left node.  ``interval_means``
    may supply exact per-fine-interval averages of a continuously-varying Z
    (the grid arrays hold left-point values).
    """
    fine = solution.grid
    if not fine.is_refinement_of(coarse):
        raise ValueError("coarse grid nodes must be a subset of the fine grid nodes")
    est = estimator or ConditionalEstimator()
    source = solution.Z if interval_means is None else np.asarray(interval_means, dtype=np.float64)
    if source.shape != solution.Z.shape:
        raise ValueError("interval means must match the fine Z array shape")
    dtf = fine.dt
    idx = [fine.locate(float(c)) for c in coarse.nodes]
    M, _, d = source.shape
    out = np.empty((M, coarse.n_steps, d))
    for i in range(coarse.n_steps):
        a, b = idx[i], idx[i + 1]
        avg = (source[:, a:b, :] * dtf[a:b][None, :, None]).sum(axis=1)
        avg /= float(fine.nodes[b] - fine.nodes[a])
        fit = cond_expect(avg, conditioning_states[:, a, :], est)
        out[:, i, :] = fit.values
    return ZpiResult(coarse=coarse, values=out)
