import numpy as np
import pytest

from coarsekit import build_geometry, make_lsw_coefficients, unit_drift
from coarsekit.errors import DomainError
from coarsekit.lsw_solver import run
from coarsekit.profiles import analyze_density, power_law_data, uniform_profile
from coarsekit.transformed_system import (
    FunctionalContext,
    XiFunction,
    constant_xi,
    equilibrium_xi_p,
    evaluate_functionals,
    evolve,
    local_solve,
    rho,
    rho_p,
    xi_from_simulation_snapshot,
)


@pytest.fixture(scope="module")
def eq05(d05):
    return equilibrium_xi_p(d05, 1.0)


@pytest.fixture(scope="module")
def ctx_uniform(d05):
    return FunctionalContext(d05, 1.0, profile=uniform_profile())


@pytest.fixture(scope="module")
def ctx_power(d05):
    pl = power_law_data(d05, 1.0)
    _, bd = analyze_density(pl.x, pl.c)
    return FunctionalContext(d05, 1.0, profile=pl, beta_data=bd)


def gradient_inner(fv, ctx, values):
    """[d_zeta I, values] from the gradient density."""
    return float(np.sum(fv.grad_density * values * ctx.x_weights / ctx.a_nodes))


# -- equilibrium ---------------------------------------------------------------

def test_equilibrium_unit_drift_constant():
    eq = equilibrium_xi_p(unit_drift(1.0), 2.0)
    ys = np.geomspace(1.0, 1e6, 50)
    assert np.max(np.abs(eq.xi(ys) - 2.0)) < 1e-8


def test_equilibrium_tail_limit(eq05, d05):
    assert abs(eq05.xi(np.array([1e8]))[0] - 1.0) < 1e-4


def test_equilibrium_bracketed_by_h(eq05, d05):
    ys = np.geomspace(d05.epsilon0, 1e7, 80)
    xi = eq05.xi(ys)
    assert np.all(xi >= 1.0 * d05.h_infinity - 1e-10)
    assert np.all(xi <= 1.0 * d05.h(ys) + 1e-10)


def test_equilibrium_ode_residual(eq05, d05):
    yw = np.geomspace(d05.epsilon0 + 2.0, 1e5, 25)
    st = 1e-3 * yw
    d1 = (eq05.xi(yw + st) - eq05.xi(yw - st)) / (2 * st)
    d2 = (eq05.xi(yw + st / 2) - eq05.xi(yw - st / 2)) / st
    dxi_fd = (4 * d2 - d1) / 3
    h = d05.h(yw)
    res = -h - h * dxi_fd + eq05.xi(yw) - yw * dxi_fd
    assert np.max(np.abs(res)) < 1e-6
    assert np.max(np.abs(dxi_fd - eq05.dxi(yw))) < 1e-8


# -- functionals ---------------------------------------------------------------

def test_Ip_at_zero_is_one(ctx_power):
    z = np.zeros_like(ctx_power.y_nodes)
    fv = evaluate_functionals(z, None, ctx_power, dzeta=z)
    assert abs(fv.I - 1.0) < 1e-6


def test_gradient_density_negative(ctx_uniform, rng):
    for _ in range(5):
        a = rng.uniform(0.1, 2.0)
        zeta = a / (1.0 + ctx_uniform.y_nodes / 10)
        eta = rng.uniform(0.05, 1.0)
        fv = evaluate_functionals(zeta, eta, ctx_uniform)
        assert np.all(fv.grad_density < 0)


def test_directional_derivative_matches_fd(ctx_uniform, rng):
    y = ctx_uniform.y_nodes
    zeta = 0.3 + 1.0 / (1.0 + y / 5)
    eta = 0.4
    fv = evaluate_functionals(zeta, eta, ctx_uniform)
    for _ in range(20):
        c1, c2 = rng.uniform(0.2, 3.0, 2)
        delta = c1 / (1.0 + y / c2) ** 2
        eps = 1e-5
        Ip = evaluate_functionals(zeta + eps * delta, eta, ctx_uniform).I
        Im = evaluate_functionals(zeta - eps * delta, eta, ctx_uniform).I
        fd = (Ip - Im) / (2 * eps)
        inner = gradient_inner(fv, ctx_uniform, delta)
        assert abs(inner - fd) < 5e-5 * max(1.0, abs(fd))


def test_bounded_I_envelope(ctx_uniform):
    # flat-beta data: the conserved integral stays bounded as eta -> 0
    y = ctx_uniform.y_nodes
    zeta = 1.0 / (1.0 + y / 20)
    etas = np.geomspace(1e-5, 1.0, 13)
    I_vals = np.array([evaluate_functionals(zeta, e, ctx_uniform).I
                       for e in etas])
    assert I_vals.max() / I_vals.min() < 10.0
    slope = np.polyfit(np.log(etas), np.log(I_vals), 1)[0]
    assert abs(slope) < 0.5


def test_rho_p_fixed_point(ctx_power, eq05):
    y = ctx_power.y_nodes
    eps0 = ctx_power.drift.epsilon0
    xi = eq05.xi(y)
    # Richardson differences with the step shrinking near the left endpoint,
    # where the equilibrium curvature blows up like an inverse square root
    st = np.minimum(1e-3 * np.maximum(y, 1.0), 0.2 * (y - eps0) + 1e-14)
    d1 = (eq05.xi(y + st) - eq05.xi(y - st)) / (2 * st)
    d2 = (eq05.xi(y + 2 * st) - eq05.xi(y - 2 * st)) / (4 * st)
    dxi_fd = (4 * d1 - d2) / 3
    val = rho_p(xi, dxi_fd, ctx_power)
    assert abs(val - 1.0) < 1e-6


def test_rho_lower_bound(ctx_uniform, d05, rng):
    floor = -d05.h(np.array([d05.epsilon0]))[0] / d05.epsilon0
    y = ctx_uniform.y_nodes
    for _ in range(8):
        a = rng.uniform(0.0, 3.0)
        b = rng.uniform(1.0, 30.0)
        zeta = a / (1.0 + y / b)
        dzeta = -a / b / (1.0 + y / b) ** 2
        eta = rng.uniform(0.02, 1.0)
        assert rho(zeta, dzeta, eta, ctx_uniform) >= floor - 1e-9


def test_eta_limit_of_rho(ctx_uniform):
    y = ctx_uniform.y_nodes
    zeta = 0.5 + 1.0 / (1.0 + y / 10)
    dzeta = -0.1 / (1.0 + y / 10) ** 2
    ref = rho_p(zeta, dzeta, ctx_uniform)
    etas = [1.0, 0.3, 0.1, 0.03, 0.01, 3e-3]
    devs = [abs(rho(zeta, dzeta, e, ctx_uniform) - ref) for e in etas]
    assert all(devs[i + 1] < devs[i] for i in range(len(devs) - 1))
    assert devs[-1] < 1e-3


def test_lipschitz_of_gradient_inner(ctx_uniform, rng):
    # |H_G(z1) - H_G(z2)| <= C ||z1 - z2||_inf for G in {h, y}; the measured
    # constant stays bounded as eta decreases (flat-beta data)
    y = ctx_uniform.y_nodes
    targets = {"h": ctx_uniform.h_nodes, "y": y}
    for G in targets.values():
        consts = []
        for eta in (1.0, 0.1, 0.01):
            worst = 0.0
            for _ in range(6):
                a1, a2 = rng.uniform(0.1, 1.5, 2)
                z1 = a1 / (1.0 + y / 8)
                z2 = a2 / (1.0 + y / 8)
                d1 = -a1 / 8 / (1.0 + y / 8) ** 2
                d2 = -a2 / 8 / (1.0 + y / 8) ** 2
                f1 = evaluate_functionals(z1, eta, ctx_uniform, dzeta=d1)
                f2 = evaluate_functionals(z2, eta, ctx_uniform, dzeta=d2)
                H1 = -gradient_inner(f1, ctx_uniform, G * (1.0 + d1))
                H2 = -gradient_inner(f2, ctx_uniform, G * (1.0 + d2))
                worst = max(worst, abs(H1 - H2) / np.max(np.abs(z1 - z2)))
            consts.append(worst)
        slope = np.polyfit(np.log([1.0, 0.1, 0.01]), np.log(consts), 1)[0]
        assert slope > -0.5


def test_I_ratio_envelope(ctx_uniform, rng):
    y = ctx_uniform.y_nodes
    pairs = [(1e-4, 1e-2), (1e-3, 0.1), (0.01, 1.0)]
    for eta1, eta2 in pairs:
        for _ in range(4):
            a1, a2 = rng.uniform(0.0, 2.0, 2)
            I1 = evaluate_functionals(a1 / (1 + y / 10), eta1, ctx_uniform).I
            I2 = evaluate_functionals(a2 / (1 + y / 10), eta2, ctx_uniform).I
            ratio = I1 / I2
            bound = 10.0 * (eta2 / eta1) ** 0.5
            assert 1.0 / bound <= ratio <= bound


def test_negative_zeta_rejected(ctx_uniform):
    z = -0.1 * np.ones_like(ctx_uniform.y_nodes)
    with pytest.raises(DomainError):
        evaluate_functionals(z, 0.5, ctx_uniform)


# -- evolution -----------------------------------------------------------------

def test_local_solve_matches_direct_rho_at_start(ctx_power):
    xi0 = constant_xi(0.0, ctx_power.char_ys, t=0.0, eta=1e-6)
    eta_fn = lambda t: np.full_like(np.asarray(t, float), 1e-6) \
        if np.ndim(t) else 1e-6
    sol = local_solve(xi0, lambda t: 1e-6, 0.1, ctx_power)
    z = np.zeros_like(ctx_power.y_nodes)
    direct = evaluate_functionals(z, 1e-6, ctx_power, dzeta=z).rho
    assert sol.rho_path[0] == pytest.approx(direct, abs=1e-12)
    assert np.all(sol.xi >= -1e-12)
    ratios = [sol.contraction[i + 1] / sol.contraction[i]
              for i in range(len(sol.contraction) - 2)]
    assert all(r < 1.0 for r in ratios)


def test_evolve_decays_to_equilibrium(ctx_power, eq05):
    xi0 = constant_xi(0.0, ctx_power.char_ys, t=0.0, eta=1.0)
    eta_fn = lambda t: np.minimum(1.0, np.exp(-np.asarray(t, float)))
    traj = evolve(xi0, eta_fn, 3.0, ctx_power, window=0.4, equilibrium=eq05)
    assert traj.inf_one_plus_dxi.min() > 0.0
    assert np.all(np.diff(traj.dist_to_equilibrium) < 1e-9)
    assert traj.rho[-1] == pytest.approx(1.0, abs=0.05)
    assert not traj.bounds_flags


def test_eta_ode_consistency(ctx_power, cs05, d05):
    # along a simulation, eta = exp(-int rho) satisfies the eta-equation by
    # construction; check it against the functional rho (a genuine loop)
    pl = power_law_data(d05, 1.0)
    series = run(cs05, pl, s_max=1.0, ds=2e-3, keep_states=True)
    etas, rhos, times = [], [], []
    for snap in series.snapshots:
        st = xi_from_simulation_snapshot(snap, d05)
        fn = XiFunction(st.ys, st.xi, st.dxi)
        etas.append(min(st.eta, 1.0))
        rhos.append(rho(fn.xi, fn.dxi, min(st.eta, 1.0), ctx_power))
        times.append(snap[0])
    etas, rhos, times = map(np.array, (etas, rhos, times))
    deta = np.gradient(etas, times)
    resid = (deta + rhos * etas)[1:-1]    # central differences only
    assert np.max(np.abs(resid)) < 2e-3


def test_cross_module_rate_identity(ctx_power, cs05, d05):
    pl = power_law_data(d05, 1.0)
    series = run(cs05, pl, s_max=2.0, ds=2e-3, keep_states=True)
    errs = []
    for snap, kap in zip(series.snapshots[::5], series.kappa[::5]):
        st = xi_from_simulation_snapshot(snap, d05)
        fn = XiFunction(st.ys, st.xi, st.dxi)
        r = rho(fn.xi, fn.dxi, min(st.eta, 1.0), ctx_power)
        errs.append(abs(r - (cs05.dphi1 - cs05.dpsi1 * kap)))
    assert max(errs) < 1e-2
