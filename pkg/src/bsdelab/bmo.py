"""BMO(S2) norms, sliceable numbers, and the reverse-Hoelder machinery.

The scalar functions here feed the exponent bookkeeping of the tail
estimates: ``phi`` is a continuous decreasing bijection of (1, inf) onto
(0, inf), ``psi`` blows up as its first argument approaches ``phi(p)``, and
the reverse-Hoelder constant of a stochastic exponential is bounded by
``psi(sl_N, p)**N`` whenever the N-th sliceable number stays below
``phi(p)``.

Because ``phi`` collapses extremely fast, its inverse for large outputs
lands closer to 1 than one float64 ulp.  All root finding therefore happens
in the "excess" variable ``q - 1``; the ``*_excess`` functions are the
numerically faithful forms of the same mathematical objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimators import ConditionalEstimator, cond_expect, linf_proxy
from .grid_paths import TimeGrid

__all__ = [
    "phi", "phi_excess", "phi_inverse", "phi_inverse_excess",
    "psi", "c8_min_p", "RHBound", "rh_bound",
    "ProcessSample", "SliceableEstimate", "bmo_s2_norm", "sliceable_numbers",
    "FeffermanReport", "fefferman_check", "fefferman_conditional",
]


def phi_excess(excess: float) -> float:
    """``phi(1 + excess)`` evaluated stably for any positive excess."""
    e = float(excess)
    if not e > 0 or not np.isfinite(e):
        raise ValueError("excess must be positive and finite")
    v = np.log1p(1.0 / (2.0 * e)) / (1.0 + e) ** 2
    # sqrt(1+v) - 1 without cancellation for tiny v
    return float(np.expm1(0.5 * np.log1p(v)))


def phi(q: float) -> float:
    """``(1 + q^{-2} log(1 + 1/(2q-2)))^{1/2} - 1`` for q > 1."""
    if not q > 1:
        raise ValueError("phi is defined for q > 1")
    return phi_excess(q - 1.0)


def phi_inverse_excess(y: float) -> float:
    """Excess ``q - 1`` of the unique q > 1 with ``phi(q) = y``.

    Bisection in log-excess over a bracket spanning the full float range,
    iterated until the bracket collapses, so the round-trip through
    :func:`phi_excess` holds to roughly evaluation accuracy (well below the
    1e-10 requirement) and the excess itself is accurate to float precision.
    """
    if not y > 0 or not np.isfinite(y):
        raise ValueError("phi attains only positive finite values")
    lo, hi = np.log(1e-300), np.log(1e300)  # phi_excess decreasing in excess
    best = (np.inf, 0.5 * (lo + hi))
    for _ in range(120):
        mid = 0.5 * (lo + hi)
        val = phi_excess(np.exp(mid))
        err = abs(val - y)
        if err < best[0]:
            best = (err, mid)
        if val > y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(mid)):
            break
    return float(np.exp(best[1]))


def phi_inverse(y: float) -> float:
    """The q > 1 with ``phi(q) = y``.

    For y beyond about 5 the excess falls under one ulp of 1.0 and the
    returned float collapses to 1.0; use :func:`phi_inverse_excess` when the
    gap itself matters.
    """
    return 1.0 + phi_inverse_excess(y)


def psi(gamma: float, p: float) -> float:
    """``(2 / (1 - (2p-2)/(2p-1) e^{p^2(gamma^2+2gamma)}))^{1/p}``.

    Defined for ``0 <= gamma < phi(p)``; the denominator is positive exactly
    on that domain and the value blows up at its edge.
    """
    if not p > 1:
        raise ValueError("psi needs p > 1")
    if gamma < 0:
        raise ValueError("psi needs gamma >= 0")
    if gamma >= phi(p):
        raise ValueError("psi domain requires gamma < phi(p)")
    den = 1.0 - (2 * p - 2) / (2 * p - 1) * np.exp(p * p * (gamma * gamma + 2 * gamma))
    if den <= 0:  # roundoff at the very edge of the domain
        raise ValueError("psi domain requires gamma < phi(p)")
    return float((2.0 / den) ** (1.0 / p))


def c8_min_p(L_z: float, s_inf: float) -> float | None:
    """Minimal integrability exponent forced by a positive ``s_inf``.

    Returns ``None`` ("no constraint") when ``L_z = 0`` or ``s_inf = 0``;
    otherwise ``q*/(q* - 1)`` with ``q* = phi^{-1}(2 sqrt(2) L_z s_inf)``,
    computed from the excess so the ratio survives huge arguments.
    """
    if L_z < 0 or s_inf < 0:
        raise ValueError("constants must be nonnegative")
    arg = 2.0 * np.sqrt(2.0) * L_z * s_inf
    if arg == 0.0:
        return None
    e = phi_inverse_excess(arg)
    return float(1.0 + 1.0 / e)


@dataclass(frozen=True)
class RHBound:
    """Reverse-Hoelder bound ``psi(s_N, p)^N``, infinite when out of domain."""

    p: float
    N: int
    s_N: float
    bound: float
    finite: bool


def rh_bound(s_N: float, p: float, N: int) -> RHBound:
    if N < 1 or int(N) != N:
        raise ValueError("slice count N must be a positive integer")
    if s_N < phi(p):
        return RHBound(p=p, N=int(N), s_N=s_N, bound=float(psi(s_N, p) ** N), finite=True)
    return RHBound(p=p, N=int(N), s_N=s_N, bound=np.inf, finite=False)


@dataclass
class ProcessSample:
    """Sampled predictable process on the grid intervals.

    ``values[m, k, :]`` applies on ``(t_k, t_{k+1}]`` and is a function of
    information at ``t_k``.  ``states`` (per-path, per-node) supply the
    conditioning variable for regression proxies; deterministic samples
    (identical across paths) need none and are evaluated exactly.
    """

    values: np.ndarray
    grid: TimeGrid
    states: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or v.shape[1] != self.grid.n_steps:
            raise ValueError("process values must be [paths, intervals, dims]")
        if not np.all(np.isfinite(v)):
            raise ValueError("process values must be finite")
        self.values = v
        if self.states is not None:
            st = np.asarray(self.states, dtype=np.float64)
            if st.ndim == 2:
                st = st[:, :, None]
            if st.shape[0] != v.shape[0] or st.shape[1] != self.grid.n_steps + 1:
                raise ValueError("states must be [paths, nodes, dims]")
            self.states = st

    @property
    def is_deterministic(self) -> bool:
        return self.values.shape[0] == 1 or bool(np.all(self.values == self.values[:1]))

    def energy_prefix(self) -> np.ndarray:
        """Cumulative energy ``C_j = sum_{k<j} |c_k|^2 dt_k`` per path."""
        sq = (self.values ** 2).sum(axis=2) * self.grid.dt[None, :]
        out = np.zeros((sq.shape[0], sq.shape[1] + 1))
        np.cumsum(sq, axis=1, out=out[:, 1:])
        return out


def _tail_cost_matrix(sample: ProcessSample, estimator: ConditionalEstimator | None,
                      linf_quantile: float) -> np.ndarray:
    """Squared slice norms ``cost[i, j]`` for every grid window ``(i, j]``.

    ``cost[i, j] = max_{i <= k < j} linf E[C_j - C_k | F_k]``: conditioning
    nodes before the window start are dominated by the window start because
    conditional expectations contract the sup norm.
    """
    grid = sample.grid
    G = grid.n_steps
    C = sample.energy_prefix()
    g = np.zeros((G + 1, G + 1))
    if sample.is_deterministic:
        c0 = C[0]
        g = np.maximum(c0[None, :] - c0[:, None], 0.0)
    else:
        if sample.states is None:
            raise ValueError("stochastic process sample needs conditioning states")
        est = estimator or ConditionalEstimator()
        for k in range(G):
            targets = C[:, k + 1:]
            fit = cond_expect(targets, sample.states[:, k, :], est)
            fitted = np.maximum(fit.values - C[:, k:k + 1], 0.0)
            for off in range(fitted.shape[1]):
                g[k, k + 1 + off] = linf_proxy(fitted[:, off], linf_quantile)
    # running max over the conditioning node, bottom-up per column
    return np.maximum.accumulate(g[::-1], axis=0)[::-1]


def bmo_s2_norm(sample: ProcessSample, estimator: ConditionalEstimator | None = None,
                linf_quantile: float = 1.0) -> float:
    """sup over nodes of the linf proxy of the conditional tail energy, square-rooted."""
    cost = _tail_cost_matrix(sample, estimator, linf_quantile)
    return float(np.sqrt(cost[0, sample.grid.n_steps]))


@dataclass
class SliceableEstimate:
    """Best grid partition into ``n_slices`` slices and its max slice norm.

    Deterministic grid-node partitions only: an upper bound on the infimum
    over stopping times (the safe direction, since these numbers enter
    ``psi`` as upper bounds on its argument).
    """

    n_slices: int
    partition: np.ndarray
    value: float
    per_slice: list = field(default_factory=list)
    linf_quantile: float = 1.0

    def to_dict(self) -> dict:
        return {"n_slices": self.n_slices, "partition": [float(x) for x in self.partition],
                "value": self.value, "per_slice": [float(x) for x in self.per_slice],
                "linf_quantile": self.linf_quantile}


def sliceable_numbers(sample: ProcessSample, N_max: int,
                      estimator: ConditionalEstimator | None = None,
                      linf_quantile: float = 1.0) -> list[SliceableEstimate]:
    """Upper estimates of the sliceable numbers for N = 1 .. N_max.

    Dynamic program over grid-node partitions minimizing the maximum slice
    norm; empty slices are allowed, so the estimates are weakly decreasing
    in N by construction.  Ties between partitions resolve to the
    lexicographically earliest node sequence.
    """
    grid = sample.grid
    G = grid.n_steps
    if N_max < 1 or int(N_max) != N_max:
        raise ValueError("N_max must be a positive integer")
    if N_max > G:
        raise ValueError("more slices than grid intervals")
    cost = _tail_cost_matrix(sample, estimator, linf_quantile)

    # suffix[n][i]: optimal max slice cost covering (node_i, T] with n slices
    inf = np.inf
    suffix = np.full((N_max + 1, G + 1), inf)
    suffix[0, G] = 0.0
    for n in range(1, N_max + 1):
        # min over j >= i of max(cost[i, j], suffix[n-1][j])
        stacked = np.maximum(cost, suffix[n - 1][None, :])
        stacked[np.tril_indices(G + 1, k=-1)] = inf
        suffix[n] = stacked.min(axis=1)

    out = []
    for n in range(1, N_max + 1):
        value = suffix[n, 0]
        tol = 1e-12 * (1.0 + value)
        nodes_idx = [0]
        i = 0
        for l in range(n, 0, -1):
            candidates = np.where(np.maximum(cost[i, :], suffix[l - 1, :]) <= value + tol)[0]
            j = int(candidates[candidates >= i][0])
            nodes_idx.append(j)
            i = j
        per_slice = [float(np.sqrt(cost[a, b])) for a, b in zip(nodes_idx[:-1], nodes_idx[1:])]
        out.append(SliceableEstimate(n_slices=n, partition=grid.nodes[nodes_idx],
                                     value=float(np.sqrt(value)), per_slice=per_slice,
                                     linf_quantile=linf_quantile))
    return out


@dataclass
class FeffermanReport:
    """Both sides of the time-integral Hoelder-type inequality."""

    p: float
    lhs: float
    rhs: float
    ratio: float
    hp_norm: float
    bmo_norm: float
    rel_se: float
    passed: bool
    mode: str = "global"
    strata: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"p": self.p, "lhs": self.lhs, "rhs": self.rhs, "ratio": self.ratio,
                "hp_norm": self.hp_norm, "bmo_norm": self.bmo_norm,
                "rel_se": self.rel_se, "pass": self.passed, "mode": self.mode,
                "strata": self.strata}


def fefferman_check(X: ProcessSample, Y: ProcessSample, p: float,
                    estimator: ConditionalEstimator | None = None,
                    linf_quantile: float = 1.0) -> FeffermanReport:
    """Check ``|| int |X||Y| dr ||_p <= sqrt(2) p ||Y||_{H_p} ||X||_BMO``.

    Deterministic inputs give an exact comparison; stochastic inputs pass
    when the inequality holds within three relative standard errors.
    """
    if p < 1:
        raise ValueError("needs p >= 1")
    if X.grid.n_steps != Y.grid.n_steps:
        raise ValueError("processes must share a grid")
    dt = X.grid.dt[None, :]
    ax = np.linalg.norm(X.values, axis=2)
    ay = np.linalg.norm(Y.values, axis=2)
    cross = (ax * ay * dt).sum(axis=1)
    ysq = (ay ** 2 * dt).sum(axis=1)
    cross_p = cross ** p
    y_p2 = ysq ** (p / 2.0)
    lhs = float(np.mean(cross_p) ** (1.0 / p))
    hp = float(np.mean(y_p2) ** (1.0 / p))
    bmo = bmo_s2_norm(X, estimator, linf_quantile)
    rhs = float(np.sqrt(2.0) * p * hp * bmo)
    deterministic = X.is_deterministic and Y.is_deterministic
    if deterministic:
        rel = 0.0
    else:
        rel_l = float(np.std(cross_p) / (np.sqrt(cross_p.size) * max(np.mean(cross_p), 1e-300))) / p
        rel_h = float(np.std(y_p2) / (np.sqrt(y_p2.size) * max(np.mean(y_p2), 1e-300))) / p
        rel = np.hypot(rel_l, rel_h)
    passed = bool(lhs <= rhs * (1.0 + 3.0 * rel) + 1e-12)
    return FeffermanReport(p=p, lhs=lhs, rhs=rhs, ratio=lhs / rhs if rhs else np.inf,
                           hp_norm=hp, bmo_norm=bmo, rel_se=rel, passed=passed)


def fefferman_conditional(X: ProcessSample, Y: ProcessSample, p: float,
                          s: float, t: float, bins: int = 5,
                          estimator: ConditionalEstimator | None = None,
                          linf_quantile: float = 1.0) -> FeffermanReport:
    """Conditional variant on ``[s, t]`` with constant ``(sqrt(2) p)^p``.

    Conditional expectations given the time-``s`` information are proxied by
    stratification on the first state coordinate at ``s``.
    """
    grid = X.grid
    i0, i1 = grid.locate(s), grid.locate(t)
    if not i0 < i1:
        raise ValueError("needs s < t on the grid")
    dt = grid.dt[None, i0:i1]
    ax = np.linalg.norm(X.values[:, i0:i1], axis=2)
    ay = np.linalg.norm(Y.values[:, i0:i1], axis=2)
    cross_p = ((ax * ay * dt).sum(axis=1)) ** p
    y_p2 = ((ay ** 2 * dt).sum(axis=1)) ** (p / 2.0)
    c_p = (np.sqrt(2.0) * p) ** p
    sup_term = _tail_cost_matrix(X, estimator, linf_quantile)[i0, i1] ** (p / 2.0)

    if X.states is not None:
        anchor = X.states[:, i0, 0]
    elif Y.states is not None:
        anchor = Y.states[:, i0, 0]
    else:
        anchor = np.zeros(cross_p.shape[0])
    if np.std(anchor) == 0:
        bins_eff = 1
        idx = np.zeros(cross_p.shape[0], dtype=int)
    else:
        bins_eff = bins
        edges = np.quantile(anchor, np.linspace(0, 1, bins + 1))
        idx = np.clip(np.searchsorted(edges[1:-1], anchor, side="right"), 0, bins - 1)

    strata = []
    all_pass = True
    for b in range(bins_eff):
        mask = idx == b
        n = int(mask.sum())
        if n == 0:
            strata.append({"stratum": b, "count": 0})
            continue
        lhs_b = float(cross_p[mask].mean())
        rhs_b = float(c_p * y_p2[mask].mean() * sup_term)
        rel = 0.0
        if not (X.is_deterministic and Y.is_deterministic) and n > 1:
            rel = float(np.hypot(np.std(cross_p[mask]) / (np.sqrt(n) * max(lhs_b, 1e-300)),
                                 np.std(y_p2[mask]) / (np.sqrt(n) * max(np.mean(y_p2[mask]), 1e-300))))
        ok = bool(lhs_b <= rhs_b * (1.0 + 3.0 * rel) + 1e-12)
        all_pass &= ok
        strata.append({"stratum": b, "count": n, "lhs_p": lhs_b, "rhs_p": rhs_b, "pass": ok})
    lhs = float(np.mean(cross_p))
    rhs = float(c_p * np.mean(y_p2) * sup_term)
    return FeffermanReport(p=p, lhs=lhs, rhs=rhs, ratio=lhs / rhs if rhs else np.inf,
                           hp_norm=float(np.mean(y_p2)), bmo_norm=float(np.sqrt(sup_term ** (2 / p))),
                           rel_se=0.0, passed=bool(all_pass), mode="conditional", strata=strata)
