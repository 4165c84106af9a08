import numpy as np
import pytest

from coarsekit import build_geometry, make_lsw_coefficients
from coarsekit.errors import DegenerateProfile, DomainError, ReachabilityError
from coarsekit.gridutil import graded_01_grid, loglog_slope
from coarsekit.profiles import (
    analyze_density,
    beta_identity_residual,
    classify,
    power_law_data,
    profile_functions,
    rebuild_h_from_beta,
    self_similar_physical,
    stationary_profile,
    uniform_profile,
)

X4096 = np.linspace(0, 1, 4097)[:-1]


def test_uniform_density_beta_half():
    prof, bd = analyze_density(X4096, np.full_like(X4096, 2.0))
    good = np.isfinite(bd.beta)
    assert np.allclose(prof.w[good], 2 * (1 - X4096[good]), atol=1e-12)
    assert np.allclose(prof.h[good], (1 - X4096[good]) ** 2, atol=1e-12)
    assert np.max(np.abs(bd.beta[good] - 0.5)) < 1e-12
    assert bd.beta0 == pytest.approx(0.5, abs=1e-6)
    assert bd.p == pytest.approx(1.0, abs=1e-5)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_power_tail_beta_is_p_over_p_plus_1(p):
    c = p * (p + 1) * (1 - X4096) ** (p - 1)
    prof, bd = analyze_density(X4096, c)
    good = np.isfinite(bd.beta)
    assert np.max(np.abs(bd.beta[good] - p / (p + 1))) < 1e-3
    assert abs(bd.beta0 - p / (p + 1)) < 1e-4


def test_normalization_h0_is_one():
    rng = np.random.default_rng(7)
    c = np.exp(-3 * X4096) * (1 + 0.3 * np.sin(9 * X4096)) + 0.05
    prof, _ = analyze_density(X4096, 5.0 * c)
    assert prof.h[0] == pytest.approx(1.0, abs=1e-14)
    assert prof.mass > 0


def test_degenerate_interior_gap_raises():
    # zero-density band strictly inside the support
    c = np.ones_like(X4096)
    c[(X4096 > 0.3) & (X4096 <= 0.7)] = 0.0
    c[X4096 > 0.7] = 5.0
    with pytest.raises(DegenerateProfile):
        analyze_density(X4096, c)


def test_bad_grid_rejected():
    with pytest.raises(DomainError):
        analyze_density(X4096 + 0.1, np.ones_like(X4096))


def test_beta_identity_and_h_rebuild():
    prof, bd = analyze_density(X4096, np.full_like(X4096, 2.0))
    assert beta_identity_residual(prof, bd) < 5e-4
    xg, hre = rebuild_h_from_beta(prof, bd)
    assert np.max(np.abs(hre - prof.h[np.isfinite(bd.beta)])) < 5e-4


def test_beta_roundtrip_constant_profiles():
    # profile of a known constant beta round-trips through analyze_density
    for p in (0.5, 1.5):
        c = p * (p + 1) * (1 - X4096) ** (p - 1)
        _, bd = analyze_density(X4096, c)
        good = np.isfinite(bd.beta) & (X4096 > 1e-3)
        assert np.max(np.abs(bd.beta[good] - p / (p + 1))) < 1e-3


def test_power_law_data_alpha_one_closed_form():
    d = build_geometry(make_lsw_coefficients(1.0))
    prof = power_law_data(d, 1.0)
    assert prof.meta["Kp"] == pytest.approx(2.0, rel=1e-10)
    assert np.max(np.abs(prof.w - 2 * (1 - prof.x))) < 1e-10


@pytest.mark.parametrize("p", [0.5, 1.0, 2.0])
def test_power_law_data_beta0(p, d05):
    prof = power_law_data(d05, p)
    _, bd = analyze_density(prof.x, prof.c)
    assert abs(bd.beta0 - p / (1 + p)) < 1e-3


def test_power_law_unit_mass(d05):
    prof = power_law_data(d05, 1.0)
    assert prof.meta["raw_mass"] == pytest.approx(1.0, abs=1e-6)


def test_stationary_profile_beta_tail(cs05):
    sp = stationary_profile(cs05, 3.0)
    assert sp.p == pytest.approx(1.0, abs=1e-12)
    x, beta = sp.profile.x, sp.beta.beta
    sel = np.isfinite(beta) & (x > 0.99)
    assert np.max(np.abs(beta[sel] - 0.5)) < 1e-2


def test_stationary_threshold_raises(cs05):
    with pytest.raises(ReachabilityError):
        stationary_profile(cs05, 0.5)


def test_stationary_classify(cs05):
    sp = stationary_profile(cs05, 3.0)
    assert classify(sp.beta) == "subcritical"


def test_self_similar_mean_one(cs05):
    sp = stationary_profile(cs05, 3.0)
    (grid, cdf), b0, sup = self_similar_physical(sp)
    mean = np.trapezoid(1.0 - cdf, grid)
    assert abs(mean - 1.0) < 1e-6
    assert sup == pytest.approx(sp.profile.w[0], rel=1e-12)


def test_self_similar_beta_at_zero_scale_invariant(cs05):
    # beta at 0 of the rescaled variable equals beta_kappa(0): compute both
    sp = stationary_profile(cs05, 3.0)
    _, b0, sup = self_similar_physical(sp)
    prof = sp.profile
    # rescaled: P(chi > z) = w(z/ w0(0)^{-1}) / w(0); beta invariance at 0
    m = 1.0 / prof.w[0]                     # mean of the unscaled variable
    pdf_chi0 = m * prof.c[0] / prof.w[0]    # chi = X/m, pdf scales by m
    mean_chi, tail_chi = 1.0, 1.0
    assert b0 == pytest.approx(pdf_chi0 * mean_chi / tail_chi ** 2, rel=1e-10)
    assert b0 == pytest.approx(prof.c[0] * prof.h[0] / prof.w[0] ** 2, rel=1e-12)


def test_self_similar_tail_exponent(cs05):
    sp = stationary_profile(cs05, 3.0)
    (grid, cdf), _, sup = self_similar_physical(sp)
    tail = 1.0 - cdf
    sel = (grid > 0.9 * sup) & (grid < sup) & (tail > 1e-12)
    slope, _ = loglog_slope(sup - grid[sel], tail[sel])
    assert abs(slope - sp.p) / sp.p < 0.1


def test_profile_functions_uniform_exact():
    pf = profile_functions(uniform_profile())
    u = np.geomspace(1e-14, 1.0, 9)
    assert np.allclose(pf.w_of_u(u), 2 * u)
    assert np.allclose(pf.h_of_u(u), u * u)
    assert np.allclose(pf.beta_of_u(u), 0.5)


def test_profile_functions_power_law_tail(d05):
    prof = power_law_data(d05, 1.0)
    pf = profile_functions(prof)
    u = np.geomspace(1e-12, 1e-2, 24)
    # h ~ w u / (p+1) deep in the tail
    ratio = pf.h_of_u(u) / (pf.w_of_u(u) * u / 2.0)
    assert np.max(np.abs(ratio - 1.0)) < 1e-2
    assert abs(pf.beta_of_u(np.array([1e-13]))[0] - 0.5) < 1e-6


def test_csv_roundtrip(tmp_path):
    prof, bd = analyze_density(X4096, np.full_like(X4096, 2.0))
    path = tmp_path / "profile.csv"
    prof.to_csv(path, beta=bd.beta)
    header = path.read_text().splitlines()[0]
    assert header == "x,c,w,h,beta"
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    assert np.allclose(data[:, 0], prof.x)
    assert np.allclose(data[:, 2], prof.w)
