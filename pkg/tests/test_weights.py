import numpy as np
import pytest
from scipy import integrate

from bsdelab import (DecoupleWindow, FbsdePreset, GridFunctional, PRESETS, SdeCoefficients,
                     assemble_weight, c6_estimate, c7_estimate, closed_form_example,
                     euler_forward, fbsde_weight, good_lambda_constants, make_grid,
                     sample_paths, tail_check, terminal_brownian, weighted_bmo_ratio)
from bsdelab.weights import WeightComponents, WeightSample

GRID = make_grid(1.0, 20)
PRESET = PRESETS["closed_form_linear"]


@pytest.fixture(scope="module")
def bundle():
    return sample_paths(GRID, d=1, M=256, seed=61)


# ---------------------------------------------------------------- fbsde weight

def test_fbsde_weight_values():
    comp = fbsde_weight(2.0, 0.0, 0.5, 0.75, c=1.0)
    assert comp.xi_part == pytest.approx(0.25) and comp.f_part == pytest.approx(0.25)
    assert fbsde_weight(2.0, 0.0, 0.75, 0.75, c=1.0).total() == 0.0
    one = fbsde_weight(3.0, 0.0, 0.5, 0.75, c=2.0)
    two = fbsde_weight(3.0, 0.0, 0.25, 0.75, c=2.0)
    assert two.xi_part == pytest.approx(2 ** 1.5 * one.xi_part)
    with pytest.raises(ValueError):
        fbsde_weight(2.0, 0.5, 0.25, 0.75, c=1.0)


def test_fbsde_weight_nonincreasing_in_u():
    us = np.linspace(0.2, 0.8, 7)
    vals = [fbsde_weight(2.0, 0.2, float(u), 0.8, c=1.3).total() for u in us]
    assert all(a >= b - 1e-15 for a, b in zip(vals, vals[1:]))


# ------------------------------------------------------------- weight assembly

def constant_data_preset():
    # driver at zero vanishes, terminal is constant 1
    coeffs = SdeCoefficients(lambda t, x: np.zeros_like(x),
                             lambda t, x: np.zeros((x.shape[0], 1, 1)),
                             lipschitz=0.0, sigma_bound=0.0)
    return FbsdePreset(name="constant_data", coeffs=coeffs, x0=0.0,
                       h=lambda t, x, y, z: np.zeros(x.shape[0]),
                       g=lambda x: np.ones(x.shape[0]), L_h=0.0, L_g=0.0)


def test_assemble_constant_data(bundle):
    comp = fbsde_weight(2.0, 0.25, 0.5, 0.75, c=1.0)
    ws = assemble_weight(constant_data_preset(), bundle, 2.0, 0.25, 0.5, 0.75, comp,
                         inner=16, seed=1)
    expect = comp.total() + 0.25 ** 2  # (t-u)^p E_u (|xi|)^p with xi = 1
    assert np.allclose(ws.wp, expect, atol=1e-12)


def test_assemble_degenerate_window(bundle):
    comp = WeightComponents(xi_part=0.3, f_part=0.2)
    ws = assemble_weight(constant_data_preset(), bundle, 2.0, 0.25, 0.75, 0.75, comp,
                         inner=4, seed=2)
    assert np.allclose(ws.wp, 0.5, atol=1e-12)  # middle and last terms vanish


def test_assemble_against_brute_force_conditioning():
    # benchmark preset: compare the resampling terms against direct conditional
    # Monte Carlo with an unrelated generator, path by path
    grid = make_grid(1.0, 20)
    b = sample_paths(grid, d=1, M=8, seed=63)
    p, s, u, t = 2.0, 0.25, 0.5, 0.75
    iu, it = grid.locate(u), grid.locate(t)
    comp = fbsde_weight(p, s, u, t, c=1.0)
    ws = assemble_weight(PRESET, b, p, s, u, t, comp, inner=4096, seed=3)

    rng = np.random.default_rng(999)
    K = 40_000
    w_u = b.brownian()[:, iu, 0]
    dt = grid.dt
    for m in range(b.num_paths):
        steps = rng.standard_normal((K, grid.n_steps - iu)) * np.sqrt(dt[iu:])
        w_path = w_u[m] + np.cumsum(steps, axis=1)  # W at nodes iu+1 .. N
        w_nodes = np.concatenate([np.full((K, 1), w_u[m]), w_path], axis=1)
        mid = (np.abs(w_nodes[:, :it - iu]) * dt[iu:it]).sum(axis=1) ** p
        tail = (np.abs(w_nodes[:, -1])
                + (np.abs(w_nodes[:, it - iu:-1]) * dt[it:]).sum(axis=1)) ** p
        se_mid = mid.std() / np.sqrt(K)
        se_tail = tail.std() / np.sqrt(K)
        got_mid = ws.terms["driver_mid"][m]
        got_tail = ws.terms["terminal_tail"][m] / (t - u) ** p
        assert abs(got_mid - mid.mean()) <= 4 * (se_mid + got_mid / np.sqrt(4096) * 2)
        assert abs(got_tail - tail.mean()) <= 4 * (se_tail + got_tail / np.sqrt(4096) * 2)


def test_assembled_weight_mean_nonincreasing_in_u():
    # the supermartingale direction, checked on ensemble means
    grid = make_grid(1.0, 20)
    b = sample_paths(grid, d=1, M=256, seed=64)
    p, s, t = 2.0, 0.2, 0.8
    means = []
    for u in (0.3, 0.5, 0.7):
        comp = fbsde_weight(p, s, u, t, c=1.0)
        ws = assemble_weight(PRESET, b, p, s, u, t, comp, inner=256, seed=10)
        means.append(ws.wp.mean())
    assert means[0] > means[1] > means[2]


def test_weight_sample_validation():
    with pytest.raises(ValueError):
        WeightSample(w=np.array([1.0]), wp=np.array([-0.1]), terms={}, p=2.0,
                     s=0.0, u=0.0, t=1.0, provenance="x")


# ------------------------------------------------------------------ C6 and C7

def test_c6_brownian_terminal(bundle):
    rep = c6_estimate(terminal_brownian(), bundle, 0.25, 0.5, p=2.0,
                      outer=128, inner=128, seed=4)
    span = 0.25
    se_d = rep.direct.std() / np.sqrt(len(rep.direct)) + float(np.mean(rep.se_direct))
    se_c = rep.decoupled.std() / np.sqrt(len(rep.decoupled)) + float(np.mean(rep.se_decoupled))
    assert abs(rep.direct.mean() - span * (1 + 1 / 128)) <= 3 * se_d
    assert abs(rep.decoupled.mean() - 2 * span) <= 3 * se_c
    assert rep.sandwich_ok
    assert not rep.inner_flagged


def test_c6_measurable_functional(bundle):
    win = DecoupleWindow.from_times(GRID, 0.25, 0.5)
    xi = GridFunctional(lambda inc, g: inc[:, :win.start, 0].sum(axis=1)
                        + inc[:, win.end:, 0].sum(axis=1))
    rep = c6_estimate(xi, bundle, 0.25, 0.5, p=2.0, outer=16, inner=16, seed=5)
    assert np.max(rep.decoupled) <= 1e-25
    assert np.max(rep.direct) <= 1e-25


def test_c6_rate_scaling():
    # decoupled estimate of g(X_T) variation scales linearly in the span (p=2)
    b = sample_paths(GRID, d=1, M=128, seed=66)
    xi = terminal_brownian()
    means = []
    for span in (0.1, 0.2, 0.4):
        rep = c6_estimate(xi, b, 0.3, 0.3 + span, p=2.0, outer=96, inner=32, seed=6)
        means.append(rep.decoupled.mean() / span)
    assert max(means) / min(means) < 1.3


def test_c7_state_free_generator(bundle):
    coeffs = PRESET.coeffs
    pre = FbsdePreset(name="state_free", coeffs=coeffs, x0=0.0,
                      h=lambda t, x, y, z: 1.0 + y, g=lambda x: x[:, 0], L_h=0.0, L_g=1.0)
    rep = c7_estimate(pre, bundle, 0.25, 0.5, p=2.0, outer=16, seed=7)
    assert np.max(rep.values) == 0.0
    assert rep.probe_margin <= 1e-12


def test_c7_linear_case_quadrature_oracle(bundle):
    u, t = 0.25, 0.5
    rep = c7_estimate(PRESET, bundle, u, t, p=2.0, outer=128, seed=8)

    def cov(a, bb):
        return 2.0 * (min(a, bb, t) - u)

    def e_absprod(a, bb):
        va, vb = cov(a, a), cov(bb, bb)
        if va <= 0 or vb <= 0:
            return 0.0
        rho = min(max(cov(a, bb) / np.sqrt(va * vb), -1.0), 1.0)
        return (2 / np.pi) * np.sqrt(va * vb) * (np.sqrt(1 - rho ** 2) + rho * np.arcsin(rho))

    iu = GRID.locate(u)
    nodes, dt = GRID.nodes, GRID.dt
    oracle = sum(e_absprod(nodes[j], nodes[k]) * dt[j] * dt[k]
                 for j in range(iu, GRID.n_steps) for k in range(iu, GRID.n_steps))
    se = np.sqrt(np.mean(rep.se ** 2) / len(rep.values)) + rep.values.std() / np.sqrt(len(rep.values))
    assert abs(rep.values.mean() - oracle) <= 4 * se
    # continuous-time quadrature bounds the discrete sum from above here
    cont, _ = integrate.dblquad(lambda bb, a: e_absprod(a, bb), u, 1.0,
                                lambda a: u, lambda a: 1.0, epsabs=1e-9)
    assert rep.values.mean() <= cont * 1.05


def test_c7_requires_generator_data(bundle):
    with pytest.raises(ValueError):
        c7_estimate(PRESETS["brownian"], bundle, 0.25, 0.5, p=2.0)


def test_c7_rate_bound(bundle):
    # estimate <= T^p L_h^p C^p (t-u)^{p/2} for some C: check the ratio is
    # bounded across spans
    ratios = []
    for span in (0.1, 0.2, 0.4):
        rep = c7_estimate(PRESET, bundle, 0.3, 0.3 + span, p=2.0, outer=64, seed=9)
        ratios.append(rep.values.mean() / span)
    assert max(ratios) / min(ratios) < 2.0


# ------------------------------------------------------------- weighted ratio

def test_weighted_ratio_matches_conditional_formula():
    grid = make_grid(1.0, 50)
    b = sample_paths(grid, d=1, M=100_000, seed=71)
    fw = euler_forward(PRESET.coeffs, PRESET.x0, b)
    sol = closed_form_example(b)
    tau, t, p, T = 0.5, 1.0, 2.0, 1.0
    rep = weighted_bmo_ratio(sol, fw, p, s=tau, t=t, tau=tau, n_strata=8,
                             strata_max=3.0 * np.sqrt(tau))
    w = b.brownian()[:, grid.locate(tau), 0]
    span = t - tau
    exact_num = span * (1 + T - t) ** 2 + w ** 2 * span ** 2
    exact_weighted = exact_num / ((1 + w ** 2 * span) * span)
    edges = rep.edges
    for k in range(8):
        mask = (np.abs(w) >= edges[k]) & (np.abs(w) < edges[k + 1])
        if mask.sum() < 50 or rep.counts[k] == 0:
            continue
        target = exact_weighted[mask].mean()
        assert abs(rep.weighted[k] - target) <= 3.5 * rep.weighted_se[k]
    assert rep.lower_bound_ok


def test_weighted_ratio_zero_span():
    grid = make_grid(1.0, 50)
    b = sample_paths(grid, d=1, M=2000, seed=72)
    fw = euler_forward(PRESET.coeffs, PRESET.x0, b)
    sol = closed_form_example(b)
    rep = weighted_bmo_ratio(sol, fw, 2.0, s=0.5, t=0.5, tau=0.5, n_strata=4)
    assert all(v == 0.0 for v, c in zip(rep.weighted, rep.counts) if c > 0)


def test_weighted_ratio_hitting_time():
    grid = make_grid(1.0, 50)
    b = sample_paths(grid, d=1, M=5000, seed=73)
    fw = euler_forward(PRESET.coeffs, PRESET.x0, b)
    sol = closed_form_example(b)
    rep = weighted_bmo_ratio(sol, fw, 2.0, s=0.2, t=0.8, tau=("hitting", 0.5), n_strata=4)
    assert all(np.isfinite(v) for v, c in zip(rep.weighted, rep.counts) if c > 0)
    assert sum(rep.counts) + rep.overflow == b.num_paths


# --------------------------------------------------------------- good lambda

def test_good_lambda_constants_examples():
    c = good_lambda_constants(np.e ** -1 / 2)
    assert c.b == pytest.approx(1.0) and c.a == pytest.approx(3.0)
    assert c.alpha == pytest.approx(2.0 / (1.0 - np.e ** -1), rel=1e-12)
    c2 = good_lambda_constants(0.05)
    assert c2.b == 1.0 and c2.a == 3.0 and c2.alpha == pytest.approx(2.0 / 0.9)
    c3 = good_lambda_constants(0.45)
    assert c3.b == pytest.approx(-1.0 / np.log(0.9), rel=1e-12)
    assert c3.a == pytest.approx(3 * c3.b, rel=1e-12)
    assert good_lambda_constants(0.49999).alpha > 1e4
    for bad in (0.0, 0.5, 0.7, -0.1):
        with pytest.raises(ValueError):
            good_lambda_constants(bad)


def brownian_tail_setup(seed, M=20_000, theta=0.05):
    grid = make_grid(1.0, 50)
    b = sample_paths(grid, d=1, M=M, seed=seed)
    w = b.brownian()[:, :, 0]
    si = grid.locate(0.25)
    A = (w[:, si:] - w[:, si:si + 1]) * np.sqrt(theta)
    psi_vals = np.sqrt(np.maximum(1.0 - grid.nodes[si:], 0.0))
    Psi = np.maximum(np.broadcast_to(psi_vals, A.shape), 1e-12)
    return A, Psi, w[:, si]


def test_tail_check_zero_process():
    A = np.zeros((500, 10))
    Psi = np.ones((500, 10))
    rep = tail_check(A, Psi, 0.05, lam_grid=[0.1, 1.0], mu_grid=[1.0, 2.0],
                     nu_grid=[0.5, 1.0])
    assert rep.passed and rep.hypothesis_ok
    assert all(r["lhs"] == 0.0 for r in rep.rows)


def test_tail_check_brownian():
    A, Psi, w_s = brownian_tail_setup(74)
    rep = tail_check(A, Psi, 0.05)
    assert rep.hypothesis_ok and rep.passed
    rep_signed = tail_check(A, Psi, 0.05, B=w_s > 0, b_descriptor="W_s>0")
    assert rep_signed.passed and rep_signed.b_probability == pytest.approx(0.5, abs=0.02)


def test_tail_check_monotone_dominance():
    A, Psi, _ = brownian_tail_setup(75, M=4000)
    rep_small = tail_check(A, Psi, 0.05, lam_grid=[0.1], mu_grid=[2.0], nu_grid=[0.3])
    rep_big_alpha = tail_check(A, Psi, 0.2, lam_grid=[0.1], mu_grid=[2.0], nu_grid=[0.3])
    # larger theta -> larger alpha -> rhs never decreases (same data)
    assert rep_big_alpha.constants.alpha > rep_small.constants.alpha
    assert rep_big_alpha.rows[0]["rhs"] >= rep_small.rows[0]["rhs"]
    # larger nu -> lhs threshold grows -> lhs never increases (exact arithmetic)
    rep_nu = tail_check(A, Psi, 0.05, lam_grid=[0.1], mu_grid=[2.0],
                        nu_grid=[0.3, 0.6, 1.2])
    lhs = [r["lhs"] for r in rep_nu.rows]
    assert lhs[0] >= lhs[1] >= lhs[2]


def test_reports_serialize_to_json(bundle):
    import json

    from bsdelab import sandwich_check

    win = DecoupleWindow.from_times(GRID, 0.25, 0.5)
    sw = sandwich_check(terminal_brownian(), bundle, win, 2.0, inner=16, seed=11)
    assert json.loads(json.dumps(sw.to_dict()))["p"] == 2.0
    rep = c6_estimate(terminal_brownian(), bundle, 0.25, 0.5, p=2.0, outer=8, inner=8,
                      seed=12)
    assert "direct_mean" in json.loads(json.dumps(rep.to_dict()))
    A, Psi, _ = brownian_tail_setup(76, M=2000)
    tr = tail_check(A, Psi, 0.05)
    blob = json.loads(json.dumps(tr.to_dict()))
    assert blob["a"] == 3.0 and len(blob["rows"]) == len(tr.rows)


def test_tail_check_per_path_sigma():
    A, Psi, _ = brownian_tail_setup(77, M=4000)
    rng = np.random.default_rng(0)
    sigma = rng.integers(0, 10, size=A.shape[0])
    rep = tail_check(A, Psi, 0.05, sigma_idx=sigma, b_descriptor="random start")
    assert rep.b_probability == 1.0
    assert all(0.0 <= r["lhs"] <= 1.0 for r in rep.rows)


def test_tail_check_validation():
    A = np.zeros((10, 4))
    with pytest.raises(ValueError):
        tail_check(A, np.ones((10, 4)), 0.05, B=np.zeros(10, dtype=bool))
    with pytest.raises(ValueError):
        tail_check(A, np.zeros((10, 4)), 0.05)
    with pytest.raises(ValueError):
        tail_check(A, np.ones((10, 3)), 0.05)
