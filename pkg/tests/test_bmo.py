import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsdelab import (ProcessSample, bmo_s2_norm, c8_min_p, fefferman_check,
                     fefferman_conditional, make_grid, phi, phi_excess, phi_inverse,
                     phi_inverse_excess, psi, rh_bound, sample_paths, sliceable_numbers)

mp.mp.dps = 40


def phi_oracle(q):
    q = mp.mpf(q)
    return float(mp.sqrt(1 + mp.log(1 + 1 / (2 * q - 2)) / q ** 2) - 1)


def psi_oracle(g, p):
    g, p = mp.mpf(g), mp.mpf(p)
    return float((2 / (1 - (2 * p - 2) / (2 * p - 1) * mp.e ** (p ** 2 * (g ** 2 + 2 * g))))
                 ** (1 / p))


def test_phi_against_independent_evaluation():
    for q in (1.1, 1.5, 2.0, 3.0, 10.0, 100.0):
        assert phi(q) == pytest.approx(phi_oracle(q), rel=1e-13)
    assert phi(2.0) == pytest.approx(0.049459993056925, abs=1e-13)


def test_phi_limits():
    # large q: phi(q) ~ 1/(4 q^3) -> 0
    assert phi(1e6) < 1e-6
    assert phi(1e6) == pytest.approx(1 / (4e18), rel=1e-4)
    # q -> 1: phi ~ sqrt(log(1/(2(q-1)))) -> infinity (slowly)
    assert phi(1 + 1e-8) > 3.0
    assert phi_excess(1e-300) > 25.0
    assert phi(1 + 1e-8) > phi(1.01) > phi(2.0)
    with pytest.raises(ValueError):
        phi(1.0)
    with pytest.raises(ValueError):
        phi(0.5)


@settings(max_examples=50, deadline=None)
@given(st.floats(1.001, 50.0), st.floats(0.01, 10.0))
def test_phi_strictly_decreasing(q, gap):
    assert phi(q) > phi(q + gap)


def test_psi_values():
    assert psi(0.0, 2.0) == pytest.approx(np.sqrt(6.0), abs=1e-12)
    for p in (2.0, 3.0):
        for frac in (0.0, 0.3, 0.7):
            g = frac * phi(p)
            assert psi(g, p) == pytest.approx(psi_oracle(g, p), rel=1e-12)
    assert abs(psi(0.0, 1000.0) - 1.0) < 1e-2


def test_psi_domain_and_blowup():
    for p in (2.0, 4.0):
        with pytest.raises(ValueError):
            psi(phi(p), p)
        with pytest.raises(ValueError):
            psi(phi(p) * 1.5, p)
        with pytest.raises(ValueError):
            psi(-0.1, p)
    assert psi(phi(2.0) * (1 - 1e-12), 2.0) > 1e3


@settings(max_examples=40, deadline=None)
@given(st.floats(1.5, 6.0), st.floats(0.05, 0.95), st.floats(0.01, 0.2))
def test_psi_increasing_in_gamma(p, frac, step):
    g = frac * phi(p)
    g2 = min(g + step * phi(p), phi(p) * 0.999)
    if g2 > g:
        assert psi(g2, p) > psi(g, p)


def test_phi_inverse_roundtrip_grid():
    for q in np.logspace(np.log10(1.01), 2, 25):
        assert abs(phi_inverse(phi(q)) - q) <= 1e-8 * q


def test_phi_inverse_examples():
    assert phi_inverse(phi(2.0)) == pytest.approx(2.0, abs=1e-8)
    # cubic decay gives phi_inverse(y) ~ (4y)^{-1/3} for small y
    assert phi_inverse(1e-6) == pytest.approx((4e-6) ** (-1 / 3), rel=1e-2)
    assert phi_inverse(1e-12) > 1e3
    assert phi_inverse(10.0) < 1 + 1e-2


def test_phi_inverse_excess_roundtrip():
    for y in (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0):
        assert abs(phi_excess(phi_inverse_excess(y)) - y) <= 1e-10


def test_c8_threshold():
    assert c8_min_p(1.0, 0.0) is None
    assert c8_min_p(0.0, 0.5) is None
    got = c8_min_p(1.0, 0.01)
    arg = 2 * np.sqrt(2) * 0.01
    from scipy.optimize import brentq
    q_star = brentq(lambda q: phi(q) - arg, 1.5, 50.0, xtol=1e-13)
    assert got == pytest.approx(q_star / (q_star - 1), rel=1e-6)


def test_rh_bound():
    assert rh_bound(0.0, 2.0, 1).bound == pytest.approx(np.sqrt(6.0), abs=1e-12)
    b3 = rh_bound(0.0, 2.5, 3)
    assert b3.bound == pytest.approx(psi(0.0, 2.5) ** 3, rel=1e-12)
    bad = rh_bound(phi(2.0) * 1.01, 2.0, 2)
    assert not bad.finite and np.isinf(bad.bound)


GRID = make_grid(1.0, 50)


def zgrad_sample(grid=GRID):
    vals = (1.0 + grid.horizon - grid.nodes[:-1])[None, :, None]
    return ProcessSample(values=vals.copy(), grid=grid)


def test_bmo_norm_constant_process():
    ones = ProcessSample(values=np.ones((1, 50, 1)), grid=GRID)
    assert bmo_s2_norm(ones) == pytest.approx(1.0, abs=1e-12)  # sqrt(T), T = 1


def test_bmo_norm_deterministic_gradient():
    s = zgrad_sample()
    norm2 = bmo_s2_norm(s) ** 2
    riemann = float(np.sum((2.0 - GRID.nodes[:-1]) ** 2 * GRID.dt))
    assert norm2 == pytest.approx(riemann, rel=1e-12)
    integral = (2.0 ** 3 - 1.0) / 3.0  # int_0^1 (2-s)^2 ds
    assert abs(norm2 - integral) <= GRID.dt.max() * (1 + GRID.horizon) ** 2


def test_bmo_norm_scaling_and_zero():
    s = zgrad_sample()
    scaled = ProcessSample(values=3.5 * s.values, grid=GRID)
    assert bmo_s2_norm(scaled) == pytest.approx(3.5 * bmo_s2_norm(s), rel=1e-12)
    zero = ProcessSample(values=np.zeros((1, 50, 1)), grid=GRID)
    assert bmo_s2_norm(zero) == 0.0


def test_bmo_norm_stochastic_vs_formula():
    # c_r = W_{t_k} on (t_k, t_{k+1}]: E[int_t^T c^2 ds | F_t] has a closed form
    grid = make_grid(1.0, 25)
    b = sample_paths(grid, d=1, M=20_000, seed=51)
    w = b.brownian()
    sample = ProcessSample(values=w[:, :-1, :], grid=grid, states=w)
    est_norm = bmo_s2_norm(sample, linf_quantile=0.999)
    # exact conditional tail energy, maximized over nodes and paths
    exact = np.empty((b.num_paths, grid.n_steps))
    for k in range(grid.n_steps):
        tk = grid.nodes[k]
        left = 1.0 - grid.dt[k:].sum()
        tail = w[:, k, 0] ** 2 * (1.0 - tk) + (1.0 - tk) ** 2 / 2.0
        exact[:, k] = tail
    target = np.sqrt(np.quantile(exact.max(axis=1), 0.999))
    assert est_norm == pytest.approx(target, rel=0.1)


def test_stochastic_norm_requires_states():
    grid = make_grid(1.0, 10)
    b = sample_paths(grid, d=1, M=64, seed=3)
    sample = ProcessSample(values=b.brownian()[:, :-1, :], grid=grid)
    with pytest.raises(ValueError, match="states"):
        bmo_s2_norm(sample)


def test_sliceable_n1_equals_norm():
    for sample in (zgrad_sample(), ProcessSample(values=np.ones((1, 50, 1)), grid=GRID)):
        est = sliceable_numbers(sample, 3)
        assert est[0].value == pytest.approx(bmo_s2_norm(sample), rel=1e-12)
        assert est[0].n_slices == 1


def test_sliceable_constant_balanced():
    grid = make_grid(1.0, 24)
    ones = ProcessSample(values=np.ones((1, 24, 1)), grid=grid)
    for est in sliceable_numbers(ones, 6):
        n = est.n_slices
        expect = np.sqrt(np.ceil(24 / n) / 24)
        assert est.value == pytest.approx(float(expect), abs=1e-12)
        assert est.partition[0] == 0.0 and est.partition[-1] == 1.0


def test_sliceable_monotone_in_n():
    grid = make_grid(1.0, 20)
    b = sample_paths(grid, d=1, M=5000, seed=52)
    w = b.brownian()
    sample = ProcessSample(values=np.abs(w[:, :-1, :]), grid=grid, states=w)
    vals = [e.value for e in sliceable_numbers(sample, 6)]
    assert all(a >= b_ - 1e-12 for a, b_ in zip(vals, vals[1:]))


def test_sliceable_subadditivity_deterministic():
    grid = make_grid(1.0, 24)
    c1 = ProcessSample(values=np.ones((1, 24, 1)), grid=grid)
    ramp = grid.nodes[:-1][None, :, None].copy()
    c2 = ProcessSample(values=ramp, grid=grid)
    both = ProcessSample(values=c1.values + c2.values, grid=grid)
    n1, n2 = 3, 2
    sl_sum = sliceable_numbers(both, n1 + n2 - 1)[-1].value
    sl1 = sliceable_numbers(c1, n1)[-1].value
    sl2 = sliceable_numbers(c2, n2)[-1].value
    assert sl_sum <= sl1 + sl2 + 1e-12


def test_sliceable_tiebreak_earliest():
    # two slices over 5 equal intervals: (2, 3) and (3, 2) splits tie at
    # max length 3; the earliest interior node wins
    grid = make_grid(1.0, 5)
    ones = ProcessSample(values=np.ones((1, 5, 1)), grid=grid)
    est = sliceable_numbers(ones, 2)[-1]
    assert est.value == pytest.approx(np.sqrt(3 / 5), abs=1e-12)
    assert np.allclose(est.partition, [0.0, 0.4, 1.0])


def test_sliceable_validation():
    grid = make_grid(1.0, 8)
    ones = ProcessSample(values=np.ones((1, 8, 1)), grid=grid)
    with pytest.raises(ValueError):
        sliceable_numbers(ones, 0)
    with pytest.raises(ValueError):
        sliceable_numbers(ones, 9)


def test_fefferman_constants_case():
    grid = make_grid(1.0, 50)
    ones = ProcessSample(values=np.ones((1, 50, 1)), grid=grid)
    rep = fefferman_check(ones, ones, 2.0)
    assert rep.lhs == pytest.approx(1.0, rel=1e-12)
    assert rep.rhs == pytest.approx(2 * np.sqrt(2), rel=1e-12)
    assert rep.passed and rep.rel_se == 0.0


def test_fefferman_deterministic_gradient():
    s = zgrad_sample()
    for p in (2.0, 3.0):
        rep = fefferman_check(s, s, p)
        assert rep.passed and rep.ratio <= 1.0


def test_fefferman_stochastic():
    grid = make_grid(1.0, 50)
    b = sample_paths(grid, d=1, M=10_000, seed=53)
    w = b.brownian()
    x = zgrad_sample()
    xs = ProcessSample(values=np.broadcast_to(x.values, (b.num_paths, 50, 1)).copy(),
                       grid=grid, states=w)
    y = ProcessSample(values=np.abs(w[:, :-1, :]), grid=grid, states=w)
    for p in (2.0, 3.0):
        rep = fefferman_check(xs, y, p)
        assert rep.passed


def test_fefferman_conditional_strata():
    grid = make_grid(1.0, 50)
    b = sample_paths(grid, d=1, M=10_000, seed=54)
    w = b.brownian()
    x = ProcessSample(values=np.broadcast_to(zgrad_sample().values, (b.num_paths, 50, 1)).copy(),
                      grid=grid, states=w)
    y = ProcessSample(values=np.abs(w[:, :-1, :]), grid=grid, states=w)
    rep = fefferman_conditional(x, y, 2.0, s=0.25, t=0.75, bins=4)
    assert rep.mode == "conditional"
    assert rep.passed
    assert sum(s["count"] for s in rep.strata) == b.num_paths
