"""Weight processes, data-variation estimators, and good-lambda tail checks.

The conditional p-th moment of the backward solution's variation on a window
``[u, t]`` is controlled by an adapted weight assembled from three pieces:
the data-variation components (how much terminal value and generator react to
redrawing the window), the drift of the generator at zero, and the terminal
integrability.  The good-lambda iteration turns that moment bound into an
exponential tail estimate plus the tail of the weight process.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decouple import GridFunctional, conditional_given_time
from .estimators import ConditionalEstimator, cond_expect
from .forward_sde import FbsdePreset, ForwardSolution, _euler_chunk
from .grid_paths import (
    CHUNK_PATHS,
    STREAM_NESTED_INNER,
    STREAM_NESTED_OUTER,
    STREAM_NESTED_WINDOW,
    PathBundle,
    counter_normals,
    map_path_chunks,
)
from .bsde_solver import BsdeGridSolution

__all__ = [
    "WeightComponents", "WeightSample", "fbsde_weight", "assemble_weight",
    "C6Report", "c6_estimate", "C7Report", "c7_estimate",
    "RatioReport", "weighted_bmo_ratio",
    "GoodLambdaConstants", "good_lambda_constants",
    "TailReport", "tail_check", "default_tail_grids",
]

_INNER_BLOCK = 32
_BLOCKS_PER_OUTER = 1 << 10


@dataclass(frozen=True)
class WeightComponents:
    """Data-variation components; for Lipschitz FBSDE data both collapse to
    ``c^p (t - u)^{p/2}``."""

    xi_part: float | np.ndarray
    f_part: float | np.ndarray

    def total(self) -> float | np.ndarray:
        return self.xi_part + self.f_part


def fbsde_weight(p: float, s: float, u: float, t: float, c: float) -> WeightComponents:
    """Closed-form components ``c^p (t - u)^{p/2}`` of the Lipschitz case."""
    if not (s <= u <= t):
        raise ValueError("need s <= u <= t")
    if p < 2:
        raise ValueError("need p >= 2")
    if c <= 0:
        raise ValueError("need c > 0")
    val = float(c ** p * (t - u) ** (p / 2.0))
    return WeightComponents(xi_part=val, f_part=val)


@dataclass
class WeightSample:
    """Per-path weight ``w`` with its p-th power and the assembled terms.

    Components are nonnegative; ``floored`` supplies the strictly positive
    version needed wherever a positive weight process is required (the
    degenerate window ``u = t`` can make the raw weight vanish).
    """

    w: np.ndarray
    wp: np.ndarray
    terms: dict
    p: float
    s: float
    u: float
    t: float
    provenance: str

    def __post_init__(self):
        if np.any(self.wp < 0) or np.any(~np.isfinite(self.wp)):
            raise ValueError("weight power must be finite and nonnegative")

    def floored(self, eps: float = 1e-12) -> np.ndarray:
        return np.maximum(self.w, eps)


def _driver_at_zero_integral(preset: FbsdePreset, a_idx: int, b_idx: int) -> GridFunctional:
    """``int_a^b |f(r, 0, 0)| dr`` as a functional of the increments.

    Re-simulates the forward state from whatever increments it receives, so
    window resampling of the functional is resampling of the driver."""
    if preset.h is None:
        raise ValueError(f"preset {preset.name!r} carries no generator")

    def evaluator(inc, grid):
        m = inc.shape[0]
        x0 = np.broadcast_to(np.atleast_1d(np.asarray(preset.x0, dtype=np.float64)),
                             (inc.shape[2],))
        X = _euler_chunk(preset.coeffs, x0, grid, inc)
        zero_y = np.zeros(m)
        zero_z = np.zeros((m, inc.shape[2]))
        acc = np.zeros(m)
        for j in range(a_idx, b_idx):
            acc += np.abs(preset.h(float(grid.nodes[j]), X[:, j, :], zero_y, zero_z)) * grid.dt[j]
        return acc

    return GridFunctional(evaluator, name=f"int|f(.,0,0)| on [{a_idx},{b_idx})")


def _terminal_abs_plus_tail(preset: FbsdePreset, t_idx: int) -> GridFunctional:
    if preset.g is None or preset.h is None:
        raise ValueError(f"preset {preset.name!r} carries no terminal/generator data")

    def evaluator(inc, grid):
        m = inc.shape[0]
        x0 = np.broadcast_to(np.atleast_1d(np.asarray(preset.x0, dtype=np.float64)),
                             (inc.shape[2],))
        X = _euler_chunk(preset.coeffs, x0, grid, inc)
        zero_y = np.zeros(m)
        zero_z = np.zeros((m, inc.shape[2]))
        acc = np.abs(np.asarray(preset.g(X[:, -1, :]), dtype=np.float64))
        for j in range(t_idx, grid.n_steps):
            acc += np.abs(preset.h(float(grid.nodes[j]), X[:, j, :], zero_y, zero_z)) * grid.dt[j]
        return acc

    return GridFunctional(evaluator, name="|xi| + tail driver integral")


def assemble_weight(preset: FbsdePreset, bundle: PathBundle, p: float,
                    s: float, u: float, t: float, components: WeightComponents,
                    inner: int = 128, seed: int = 0, threads: int = 1) -> WeightSample:
    """Assemble ``w^p = (w_xi + w_f) + E_u (int_u^t |f(r,0,0)| dr)^p
    + (t-u)^p E_u (|xi| + int_t^T |f(r,0,0)| dr)^p`` path by path.

    Conditioning on the time-``u`` information is realized by resampling the
    increments after ``u``.
    """
    grid = bundle.grid
    u_idx, t_idx = grid.locate(u), grid.locate(t)
    grid.locate(s)
    if not s <= u <= t:
        raise ValueError("need s <= u <= t")
    comp = np.asarray(components.total(), dtype=np.float64)

    mid = _driver_at_zero_integral(preset, u_idx, t_idx)
    mid_p = GridFunctional(lambda inc, g: mid(inc, g) ** p, name="(mid)^p")
    tail = _terminal_abs_plus_tail(preset, t_idx)
    tail_p = GridFunctional(lambda inc, g: tail(inc, g) ** p, name="(tail)^p")

    if u_idx < grid.n_steps:
        term2 = conditional_given_time(mid_p, bundle, u_idx, inner, seed, threads)
        term3 = conditional_given_time(tail_p, bundle, u_idx, inner, seed + 1, threads)
    else:
        term2 = mid_p(bundle.increments, grid)
        term3 = tail_p(bundle.increments, grid)
    tu = float(grid.nodes[t_idx] - grid.nodes[u_idx])
    wp = comp + term2 + tu ** p * term3
    return WeightSample(w=wp ** (1.0 / p), wp=wp,
                        terms={"components": comp, "driver_mid": term2,
                               "terminal_tail": tu ** p * term3},
                        p=p, s=s, u=u, t=t, provenance="assembled")


def _tail_scale(grid, i0):
    return np.sqrt(grid.dt[i0:])[None, :, None]


@dataclass
class C6Report:
    """Two estimators of the terminal-value variation over a window.

    ``direct`` targets ``E_u |xi - E_window xi|^p`` (nested resampling);
    ``decoupled`` targets ``E_u |xi - xi_decoupled|^p``.  They bracket each
    other within the factor ``2^p``.
    """

    direct: np.ndarray
    decoupled: np.ndarray
    se_direct: np.ndarray
    se_decoupled: np.ndarray
    p: float
    inner_flagged: bool
    sandwich_ok: bool

    def to_dict(self) -> dict:
        return {"direct_mean": float(self.direct.mean()),
                "decoupled_mean": float(self.decoupled.mean()),
                "p": self.p, "inner_flagged": self.inner_flagged,
                "sandwich_ok": self.sandwich_ok}


def c6_estimate(xi: GridFunctional, bundle: PathBundle, u: float, t: float, p: float,
                outer: int = 64, inner: int = 64, seed: int = 0,
                threads: int = 1) -> C6Report:
    """Per-path estimates of the window variation of a terminal functional.

    Outer redraws of the post-``u`` increments realize the conditioning on
    the time-``u`` information; for each outer configuration the window
    conditional is estimated by inner window redraws (direct form) and by an
    independent window substitution (decoupled form).
    """
    if outer < 1 or inner < 1:
        raise ValueError("outer and inner sample counts must be positive")
    if outer >= _BLOCKS_PER_OUTER:
        raise ValueError("outer sample count too large for the key layout")
    grid = bundle.grid
    iu, it = grid.locate(u), grid.locate(t)
    if not iu < it:
        raise ValueError("need u < t on the grid")
    d = bundle.dimension
    N = grid.n_steps
    tail_scale = _tail_scale(grid, iu)
    win_scale = np.sqrt(grid.dt[iu:it])[None, :, None]
    mix = bundle.seed ^ (int(seed) << 1)

    def job(a: int, b: int):
        chunk = a // CHUNK_PATHS
        m = b - a
        base = bundle.increments[a:b].copy()
        acc_dir = np.zeros(m)
        acc_dec = np.zeros(m)
        sq_dir = np.zeros(m)
        sq_dec = np.zeros(m)
        inner_var = np.zeros(m)
        for o in range(outer):
            tail = counter_normals(mix, STREAM_NESTED_OUTER, chunk, o, (m, N - iu, d)) * tail_scale
            cfg = base
            cfg[:, iu:, :] = tail
            xi_o = xi(cfg, grid)
            win = counter_normals(mix, STREAM_NESTED_WINDOW, chunk, o, (m, it - iu, d)) * win_scale
            cfg[:, iu:it, :] = win
            v_dec = np.abs(xi_o - xi(cfg, grid)) ** p
            acc_dec += v_dec
            sq_dec += v_dec ** 2
            s1 = np.zeros(m)
            s2 = np.zeros(m)
            done, bi = 0, 0
            while done < inner:
                k = min(_INNER_BLOCK, inner - done)
                draws = counter_normals(mix, STREAM_NESTED_INNER, chunk,
                                        o * _BLOCKS_PER_OUTER + bi,
                                        (m, k, it - iu, d)) * win_scale[:, None]
                for j in range(k):
                    cfg[:, iu:it, :] = draws[:, j]
                    val = xi(cfg, grid)
                    s1 += val
                    s2 += val ** 2
                done += k
                bi += 1
            mean_in = s1 / inner
            var_in = np.maximum(s2 / inner - mean_in ** 2, 0.0)
            inner_var += var_in / inner
            v_dir = np.abs(xi_o - mean_in) ** p
            acc_dir += v_dir
            sq_dir += v_dir ** 2
        direct = acc_dir / outer
        dec = acc_dec / outer
        se_dir = np.sqrt(np.maximum(sq_dir / outer - direct ** 2, 0.0) / outer)
        se_dec = np.sqrt(np.maximum(sq_dec / outer - dec ** 2, 0.0) / outer)
        return np.stack([direct, dec, se_dir, se_dec, inner_var / outer], axis=1)

    out = map_path_chunks(job, bundle.num_paths, threads)
    direct, dec, se_dir, se_dec, inner_var = out.T
    # inner-resolution flag: inner noise (on the xi scale) raised to p against
    # the estimate itself
    flagged = bool(np.mean(inner_var) ** (p / 2.0) > 0.2 * max(np.mean(direct), 1e-300))
    gap_lo = dec - direct
    gap_hi = 2.0 ** p * direct - dec
    se_lo = float(np.sqrt(np.mean(se_dir ** 2 + se_dec ** 2) / len(direct)))
    n = len(direct)
    ok = bool(gap_lo.mean() >= -3 * (gap_lo.std() / np.sqrt(n) + se_lo)
              and gap_hi.mean() >= -3 * (gap_hi.std() / np.sqrt(n) + se_lo))
    return C6Report(direct=direct, decoupled=dec, se_direct=se_dir, se_decoupled=se_dec,
                    p=p, inner_flagged=flagged, sandwich_ok=ok)


@dataclass
class C7Report:
    """Per-path estimate of the generator variation over a window."""

    values: np.ndarray
    se: np.ndarray
    p: float
    probe_margin: float

    def to_dict(self) -> dict:
        return {"mean": float(self.values.mean()), "p": self.p,
                "probe_margin": self.probe_margin}


def c7_estimate(preset: FbsdePreset, bundle: PathBundle, u: float, t: float, p: float,
                probes=((0.0, 0.0), (1.0, 1.0), (-2.0, 3.0)), outer: int = 64,
                seed: int = 0, threads: int = 1) -> C7Report:
    """Estimate ``E_u (int_u^T sup_{y,z} |f(r,y,z) - f_decoupled(r,y,z)| dr)^p``.

    For generator data of the form ``h(r, X_r, y, z)`` the sup over (y, z)
    collapses to the Lipschitz bound ``L_h |X_r - X_r_decoupled|``; the probe
    points only validate that this bound dominates sampled evaluations.
    """
    if preset.h is None:
        raise ValueError("generator variation needs forward-diffusion generator data "
                         "(sup over unbounded (y, z) is not computable otherwise)")
    grid = bundle.grid
    iu, it = grid.locate(u), grid.locate(t)
    if not iu < it:
        raise ValueError("need u < t on the grid")
    d = bundle.dimension
    N = grid.n_steps
    tail_scale = _tail_scale(grid, iu)
    win_scale = np.sqrt(grid.dt[iu:it])[None, :, None]
    mix = bundle.seed ^ (int(seed) << 1)
    x0 = np.broadcast_to(np.atleast_1d(np.asarray(preset.x0, dtype=np.float64)), (d,))
    dt_tail = grid.dt[iu:]
    probe_margin = 0.0

    def job(a: int, b: int):
        nonlocal probe_margin
        chunk = a // CHUNK_PATHS
        m = b - a
        cfg = bundle.increments[a:b].copy()
        acc = np.zeros(m)
        sq = np.zeros(m)
        for o in range(outer):
            tail = counter_normals(mix, STREAM_NESTED_OUTER, chunk, o, (m, N - iu, d)) * tail_scale
            cfg[:, iu:, :] = tail
            X = _euler_chunk(preset.coeffs, x0, grid, cfg)
            win = counter_normals(mix, STREAM_NESTED_WINDOW, chunk, o, (m, it - iu, d)) * win_scale
            cfg[:, iu:it, :] = win
            X_dec = _euler_chunk(preset.coeffs, x0, grid, cfg)
            dist = np.linalg.norm(X[:, iu:-1, :] - X_dec[:, iu:-1, :], axis=2)
            integral = preset.L_h * (dist * dt_tail[None, :]).sum(axis=1)
            v = integral ** p
            acc += v
            sq += v ** 2
            # probe validation on the first chunk only: one writer, no race
            if o == outer - 1 and a == 0:
                for (py, pz) in probes:
                    yv = np.full(m, float(py))
                    zv = np.full((m, d), float(pz))
                    for j in range(iu, N):
                        tj = float(grid.nodes[j])
                        gap = np.abs(preset.h(tj, X[:, j, :], yv, zv)
                                     - preset.h(tj, X_dec[:, j, :], yv, zv))
                        bound = preset.L_h * np.linalg.norm(X[:, j, :] - X_dec[:, j, :], axis=1)
                        probe_margin = max(probe_margin, float(np.max(gap - bound)))
        vals = acc / outer
        se = np.sqrt(np.maximum(sq / outer - vals ** 2, 0.0) / outer)
        return np.stack([vals, se], axis=1)

    out = map_path_chunks(job, bundle.num_paths, threads)
    return C7Report(values=out[:, 0], se=out[:, 1], p=p, probe_margin=probe_margin)


@dataclass
class RatioReport:
    """Stratified conditional moment of the variation, weighted and raw."""

    p: float
    t: float
    edges: np.ndarray
    counts: list
    weighted: list
    weighted_se: list
    unweighted: list
    unweighted_se: list
    c_p_estimate: float
    c_p_regression: float
    lower_bound_ok: bool
    stable: bool
    overflow: int

    def max_min_weighted(self) -> float:
        vals = [v for v, c in zip(self.weighted, self.counts) if c > 0]
        return float(max(vals) / min(vals)) if vals else np.nan

    def top_bottom_unweighted(self) -> float:
        vals = [v for v, c in zip(self.unweighted, self.counts) if c > 0]
        return float(vals[-1] / vals[0]) if len(vals) >= 2 else np.nan

    def to_rows(self):
        rows = []
        for i in range(len(self.counts)):
            rows.append({"stratum": i, "lo": float(self.edges[i]), "hi": float(self.edges[i + 1]),
                         "count": self.counts[i], "weighted": self.weighted[i],
                         "weighted_se": self.weighted_se[i], "unweighted": self.unweighted[i],
                         "unweighted_se": self.unweighted_se[i]})
        return rows


def _resolve_tau(forward: ForwardSolution, s_idx: int, t_idx: int, tau):
    if isinstance(tau, tuple) and tau[0] == "hitting":
        level = float(tau[1])
        absx = np.linalg.norm(forward.states[:, s_idx:t_idx + 1, :], axis=2)
        hits = absx >= level
        first = np.where(hits.any(axis=1), hits.argmax(axis=1), t_idx - s_idx)
        return s_idx + first
    idx = forward.grid.locate(float(tau))
    if not s_idx <= idx <= t_idx:
        raise ValueError("tau must lie in [s, t]")
    return np.full(forward.states.shape[0], idx, dtype=int)


def weighted_bmo_ratio(solution: BsdeGridSolution, forward: ForwardSolution, p: float,
                       s: float, t: float, tau, estimator: ConditionalEstimator | None = None,
                       n_strata: int = 10, strata_max: float | None = None) -> RatioReport:
    """Estimate ``E[ |Y_t - Y_tau|^p / (1 + |X_tau|^p (t-tau)^{p/2}) | F_tau ]
    / (t - tau)^{p/2}`` per stratum of ``|X_tau|``, plus the same without the
    weight.

    The conditional expectation is proxied two ways (regression on the state
    at ``tau``; stratum means) and the stratum maximum estimates the constant
    ``c^p``.  Strata are equal-width bins of ``|X_tau|`` from 0 to
    ``strata_max`` (default three standard deviations); paths beyond the last
    edge are counted as overflow, and empty strata are reported, not fatal.
    """
    if p < 2:
        raise ValueError("moment ratio needs p >= 2")
    grid = solution.grid
    s_idx, t_idx = grid.locate(s), grid.locate(t)
    if not s_idx <= t_idx:
        raise ValueError("need s <= t")
    tau_idx = _resolve_tau(forward, s_idx, t_idx, tau)
    m = solution.Y.shape[0]
    rows = np.arange(m)
    y_tau = solution.Y[rows, tau_idx]
    x_tau = np.linalg.norm(forward.states[rows, tau_idx, :], axis=1)
    span = grid.nodes[t_idx] - grid.nodes[tau_idx]
    dyp = np.abs(solution.Y[:, t_idx] - y_tau) ** p
    weight = 1.0 + x_tau ** p * span ** (p / 2.0)
    norm = span ** (p / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        weighted = np.where(norm > 0, dyp / (weight * norm), 0.0)
        unweighted = np.where(norm > 0, dyp / norm, 0.0)

    hi = strata_max if strata_max is not None else 3.0 * float(x_tau.std())
    if hi <= 0:
        hi = max(float(x_tau.max()), 1.0)
    edges = np.linspace(0.0, hi, n_strata + 1)
    idx = np.searchsorted(edges[1:], x_tau, side="right")
    overflow = int((idx >= n_strata).sum())

    def stratum_stats(values, k):
        mask = idx == k
        n = int(mask.sum())
        if n == 0:
            return n, np.nan, np.nan
        se = float(values[mask].std() / np.sqrt(n)) if n > 1 else np.nan
        return n, float(values[mask].mean()), se

    counts, wmeans, wses, umeans, uses = [], [], [], [], []
    for k in range(n_strata):
        n, mean_w, se_w = stratum_stats(weighted, k)
        _, mean_u, se_u = stratum_stats(unweighted, k)
        counts.append(n)
        wmeans.append(mean_w)
        wses.append(se_w)
        umeans.append(mean_u)
        uses.append(se_u)

    est = estimator or ConditionalEstimator()
    if np.std(x_tau) > 0:
        fit = cond_expect(weighted, x_tau[:, None], est)
        c_p_reg = float(np.max(fit.values))
    else:
        c_p_reg = float(np.mean(weighted))
    have = [v for v, c in zip(wmeans, counts) if c > 0]
    c_p_est = float(max(have)) if have else np.nan

    # refinement stability: doubling the stratum count should not move the max
    idx2 = np.searchsorted(np.linspace(0.0, hi, 2 * n_strata + 1)[1:], x_tau, side="right")
    refined = [weighted[idx2 == k].mean() for k in range(2 * n_strata)
               if int((idx2 == k).sum()) > 1]
    stable = bool(refined and np.isfinite(c_p_est) and c_p_est > 0
                  and abs(np.log(max(refined) / c_p_est)) < np.log(2.0))

    # sharp lower bound: E|dY|^p >= (t-tau)^{p/2} (1 + |X_tau|^p (t-tau)^{p/2})
    bound = norm * weight
    lower_ok = True
    for k in range(n_strata):
        mask = idx == k
        n = int(mask.sum())
        if n < 2:
            continue
        gap = dyp[mask] - bound[mask]
        lower_ok &= bool(gap.mean() >= -3 * gap.std() / np.sqrt(n))

    return RatioReport(p=p, t=float(grid.nodes[t_idx]), edges=edges, counts=counts,
                       weighted=wmeans, weighted_se=wses, unweighted=umeans,
                       unweighted_se=uses, c_p_estimate=c_p_est, c_p_regression=c_p_reg,
                       lower_bound_ok=bool(lower_ok), stable=stable, overflow=overflow)


@dataclass(frozen=True)
class GoodLambdaConstants:
    """Constants of the good-lambda conclusion, chased from its proof.

    With ``eta = 2 theta`` the iteration gives
    ``P_B(g > lam + mu nu) <= e^{1 - mu/b} P_B(g > lam)
    + (2/(1-eta)) W(nu/3) / P(B)`` with ``b = max(1, -1/log eta)``;
    substituting ``mu -> b mu`` and ``nu -> 3 nu`` yields the stated form
    with ``a = 3b`` and ``alpha = 2/(1-eta)``.
    """

    theta: float
    eta: float
    b: float
    a: float
    alpha: float


def good_lambda_constants(theta: float) -> GoodLambdaConstants:
    if not 0.0 < theta < 0.5:
        raise ValueError("theta must lie in (0, 1/2)")
    eta = 2.0 * theta
    b = max(1.0, -1.0 / np.log(eta))
    return GoodLambdaConstants(theta=theta, eta=eta, b=b, a=3.0 * b, alpha=2.0 / (1.0 - eta))


@dataclass
class TailReport:
    """Empirical check of the good-lambda tail inequality on one ensemble."""

    theta: float
    constants: GoodLambdaConstants
    b_probability: float
    b_descriptor: str
    hypothesis: list
    rows: list
    hypothesis_ok: bool
    passed: bool

    def to_dict(self) -> dict:
        return {"theta": self.theta, "a": self.constants.a, "alpha": self.constants.alpha,
                "b_probability": self.b_probability, "b": self.b_descriptor,
                "hypothesis_ok": self.hypothesis_ok, "pass": self.passed,
                "rows": self.rows, "hypothesis": self.hypothesis}


def _prop_se(p_hat: float, n: int) -> float:
    return float(np.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / n))


def default_tail_grids(A: np.ndarray, Psi: np.ndarray, sigma_idx) -> tuple:
    """Quantile-based grids covering the region where the inequality binds."""
    m, n = A.shape
    rows = np.arange(m)
    sig = np.broadcast_to(np.asarray(sigma_idx, dtype=int), (m,))
    a_sig = A[rows, sig]
    end = np.abs(A[:, -1] - a_sig)
    u = np.arange(n)[None, :]
    valid = u >= sig[:, None]
    sup = np.where(valid, np.abs(A - a_sig[:, None]), -np.inf).max(axis=1)
    lam = np.quantile(sup, [0.5, 0.75, 0.9])
    mu = np.array([1.0, 2.0, 4.0])
    nu = np.quantile(end, [0.5, 0.75, 0.9, 0.95, 0.99])
    nu = np.maximum(nu, 1e-12)
    return lam, mu, nu


def tail_check(A: np.ndarray, Psi: np.ndarray, theta: float,
               lam_grid=None, mu_grid=None, nu_grid=None,
               B: np.ndarray | None = None, sigma_idx=0,
               b_descriptor: str = "all") -> TailReport:
    """Verify the good-lambda conclusion on a path ensemble.

    First checks the hypothesis ``P_B(|A_R - A_sigma| > nu) <= theta
    + P_B(sup Psi > nu)`` over the nu grid, then compares
    ``P_B(sup |A - A_sigma| > lam + a mu nu)`` against
    ``e^{1-mu} P_B(sup > lam) + alpha P_B(sup Psi > nu)`` for every grid
    point, within three combined standard errors.
    """
    A = np.asarray(A, dtype=np.float64)
    Psi = np.asarray(Psi, dtype=np.float64)
    if A.shape != Psi.shape:
        raise ValueError("process and weight arrays must share a shape")
    m, n = A.shape
    if np.any(Psi <= 0):
        raise ValueError("weight process must be strictly positive")
    mask = np.ones(m, dtype=bool) if B is None else np.asarray(B, dtype=bool)
    nb = int(mask.sum())
    if nb == 0:
        raise ValueError("conditioning event has zero probability")
    consts = good_lambda_constants(theta)

    rows_idx = np.arange(m)
    sig = np.broadcast_to(np.asarray(sigma_idx, dtype=int), (m,))
    a_sig = A[rows_idx, sig]
    u = np.arange(n)[None, :]
    valid = u >= sig[:, None]
    sup = np.where(valid, np.abs(A - a_sig[:, None]), -np.inf).max(axis=1)[mask]
    end = np.abs(A[:, -1] - a_sig)[mask]
    sup_psi = np.where(valid, Psi, -np.inf).max(axis=1)[mask]

    if lam_grid is None or mu_grid is None or nu_grid is None:
        dl, dm, dn = default_tail_grids(A, Psi, sigma_idx)
        lam_grid = dl if lam_grid is None else lam_grid
        mu_grid = dm if mu_grid is None else mu_grid
        nu_grid = dn if nu_grid is None else nu_grid

    hypothesis = []
    hyp_ok = True
    for nu in np.asarray(nu_grid, dtype=np.float64):
        lhs = float((end > nu).mean())
        wt = float((sup_psi > nu).mean())
        se = np.hypot(_prop_se(lhs, nb), _prop_se(wt, nb))
        ok = bool(lhs <= theta + wt + 3 * se)
        hyp_ok &= ok
        hypothesis.append({"nu": float(nu), "lhs": lhs, "rhs": theta + wt, "pass": ok})

    rows = []
    all_ok = True
    for lam in np.asarray(lam_grid, dtype=np.float64):
        p_lam = float((sup > lam).mean())
        se_lam = _prop_se(p_lam, nb)
        for mu in np.asarray(mu_grid, dtype=np.float64):
            decay = float(np.exp(1.0 - mu))
            for nu in np.asarray(nu_grid, dtype=np.float64):
                lhs = float((sup > lam + consts.a * mu * nu).mean())
                wt = float((sup_psi > nu).mean())
                rhs = decay * p_lam + consts.alpha * wt
                se = np.sqrt(_prop_se(lhs, nb) ** 2 + (decay * se_lam) ** 2
                             + (consts.alpha * _prop_se(wt, nb)) ** 2)
                ok = bool(lhs <= rhs + 3 * se)
                all_ok &= ok
                rows.append({"lam": float(lam), "mu": float(mu), "nu": float(nu),
                             "lhs": lhs, "rhs": rhs, "pass": ok})
    return TailReport(theta=theta, constants=consts, b_probability=nb / m,
                      b_descriptor=b_descriptor, hypothesis=hypothesis, rows=rows,
                      hypothesis_ok=bool(hyp_ok), passed=bool(all_ok and hyp_ok))
