"""Shared conditional-expectation machinery.

Least-squares regression on polynomial bases and stratified bin means, behind
one interface so every report can record which proxy produced its numbers.
Nested (resampling) conditioning lives in :mod:`bsdelab.decouple`, which owns
the generative handle it needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

__all__ = ["BasisSpec", "ConditionalEstimator", "CondFit", "cond_expect", "linf_proxy",
           "polynomial_features"]


@dataclass(frozen=True)
class BasisSpec:
    """Global polynomial basis in the conditioning state."""

    degree: int = 3
    standardize: bool = True

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 0:
            raise ValueError("polynomial degree must be a nonnegative integer")


@dataclass(frozen=True)
class ConditionalEstimator:
    """Configuration of a conditional-expectation proxy.

    kind:
        ``"regression"`` -- least-squares projection on ``basis``,
        ``"stratified"`` -- bin means over quantile bins of the first state
        coordinate, ``"nested"`` -- inner resampling (handled by
        ``decouple.conditional_over_window``).
    """

    kind: str = "regression"
    basis: BasisSpec = field(default_factory=BasisSpec)
    ridge: float = 0.0
    bins: int = 10
    inner: int = 64

    def __post_init__(self):
        if self.kind not in ("regression", "stratified", "nested"):
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        if self.bins < 2:
            raise ValueError("need at least two strata")
        if self.inner < 1:
            raise ValueError("inner sample count must be >= 1")

    def describe(self) -> dict:
        return {"kind": self.kind, "degree": self.basis.degree, "ridge": self.ridge,
                "bins": self.bins, "inner": self.inner}


@dataclass
class CondFit:
    """Fitted conditional expectations plus standard-error diagnostics."""

    values: np.ndarray
    se: float
    diagnostics: dict


def polynomial_features(x: np.ndarray, degree: int) -> np.ndarray:
    """All monomials of total degree <= ``degree`` in the columns of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("conditioning state must be [paths, dims]")
    m, k = x.shape
    cols = [np.ones(m)]
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(k), deg):
            col = np.ones(m)
            for j in combo:
                col = col * x[:, j]
            cols.append(col)
    return np.column_stack(cols)


def _design(conditioning: np.ndarray, basis: BasisSpec, n_paths: int):
    x = np.asarray(conditioning, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != n_paths:
        raise ValueError("conditioning and target must have equal path counts")
    if basis.standardize:
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        keep = sd > 0
        x = (x[:, keep] - mu[keep]) / sd[keep] if keep.any() else np.empty((n_paths, 0))
    A = polynomial_features(x, basis.degree) if x.shape[1] else np.ones((n_paths, 1))
    if A.shape[1] >= n_paths / 10:
        raise ValueError(f"basis size {A.shape[1]} too large for {n_paths} paths (overfitting guard)")
    return A


def _solve_normal(A: np.ndarray, y: np.ndarray, ridge: float):
    G = A.T @ A
    rhs = A.T @ y
    diagnostics = {}
    sv = np.linalg.svd(G, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    diagnostics["condition_number"] = cond
    lam = ridge
    if not np.isfinite(cond) or cond > 1e12:
        # Singular or near-singular normal equations: ridge fallback.
        lam = max(lam, 1e-8 * float(np.trace(G)) / G.shape[0])
        diagnostics["ridge_fallback"] = lam
    if lam > 0:
        G = G + lam * np.eye(G.shape[0])
    coef = np.linalg.solve(G, rhs)
    return coef, diagnostics


def cond_expect(target: np.ndarray, conditioning: np.ndarray,
                est: ConditionalEstimator) -> CondFit:
    """Estimate ``E[target | conditioning]`` path by path.

    Regression returns fitted values of the least-squares projection;
    stratified returns bin means.  The scalar ``se`` is a noise proxy for the
    fitted values (residual scale times sqrt(dim / paths)).
    """
    y = np.asarray(target, dtype=np.float64)
    if y.ndim not in (1, 2):
        raise ValueError("target must be [paths] or [paths, targets]")
    m = y.shape[0]
    if est.kind == "regression":
        A = _design(conditioning, est.basis, m)
        coef, diagnostics = _solve_normal(A, y, est.ridge)
        fitted = A @ coef
        resid = y - fitted
        sigma = float(np.sqrt(np.mean(resid ** 2)))
        se = sigma * np.sqrt(A.shape[1] / m)
        diagnostics["basis_size"] = A.shape[1]
        return CondFit(values=fitted, se=se, diagnostics=diagnostics)
    if est.kind == "stratified":
        x = np.asarray(conditioning, dtype=np.float64)
        if x.ndim > 1:
            x = x[:, 0]
        edges = np.quantile(x, np.linspace(0, 1, est.bins + 1))
        idx = np.clip(np.searchsorted(edges[1:-1], x, side="right"), 0, est.bins - 1)
        fitted = np.empty_like(y)
        counts, empty = [], []
        worst_se = 0.0
        for b in range(est.bins):
            mask = idx == b
            n = int(mask.sum())
            counts.append(n)
            if n == 0:
                empty.append(b)
                continue
            mean = y[mask].mean(axis=0)
            fitted[mask] = mean
            if n > 1:
                worst_se = max(worst_se, float(np.max(np.std(y[mask], axis=0) / np.sqrt(n))))
        return CondFit(values=fitted, se=worst_se,
                       diagnostics={"bin_counts": counts, "empty_bins": empty, "edges": edges})
    raise NotImplementedError(
        "nested conditioning needs a generative handle; use decouple.conditional_over_window")


def linf_proxy(values: np.ndarray, quantile: float = 1.0) -> float:
    """Empirical quantile proxy for the essential supremum (q = 1 is the max)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("linf proxy of empty input")
    if not 0 < quantile <= 1:
        raise ValueError("quantile must lie in (0, 1]")
    return float(np.quantile(v, quantile))
