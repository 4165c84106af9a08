import numpy as np
import pytest

from coarsekit import (
    CoefficientSet,
    build_geometry,
    check_stability_conditions,
    make_lsw_coefficients,
    unit_drift,
    validate_structure,
)
from coarsekit.errors import DomainError


def test_power_pair_point_values():
    cs = make_lsw_coefficients(0.5)
    assert cs.phi(0.25) == pytest.approx(0.25, abs=1e-15)
    assert cs.psi(0.25) == pytest.approx(0.5, abs=1e-15)


def test_power_pair_endpoint_slopes():
    cs = make_lsw_coefficients(0.5)
    assert cs.dphi1 == pytest.approx(-0.5)
    assert cs.dpsi1 == pytest.approx(-0.5)
    # symbolic differentiation cross-check at x=1 via finite differences
    eps = 1e-6
    fd_phi = (cs.phi(1.0) - cs.phi(1.0 - eps)) / eps
    fd_psi = (cs.psi(1.0) - cs.psi(1.0 - eps)) / eps
    assert fd_phi == pytest.approx(-0.5, abs=1e-5)
    assert fd_psi == pytest.approx(-0.5, abs=1e-5)


def test_alpha_one_degenerates_to_linear_pair():
    cs = make_lsw_coefficients(1.0)
    xs = np.linspace(0, 1, 11)
    assert np.allclose(cs.phi(xs), 0.0, atol=1e-15)
    assert np.allclose(cs.psi(xs), 1.0 - xs, atol=1e-15)


@pytest.mark.parametrize("bad", [0.0, -0.3, 1.5, 2.0])
def test_alpha_out_of_range_rejected(bad):
    with pytest.raises(DomainError):
        make_lsw_coefficients(bad)


def test_validate_structure_power_third():
    rep = validate_structure(make_lsw_coefficients(1.0 / 3.0))
    assert rep.passed, rep.failures()


def test_validate_structure_alpha_one_fails_strict_slope():
    rep = validate_structure(make_lsw_coefficients(1.0))
    assert not rep.passed
    assert "D1_slope" in rep.failures()
    assert rep.quadratic_pathway


def test_validate_structure_flat_psi_slope_fails():
    # psi = (1-x)^2 has psi'(1) = 0
    cs = CoefficientSet(
        phi=lambda x: np.asarray(x) * (1 - np.asarray(x)),
        psi=lambda x: (1 - np.asarray(x)) ** 2,
        dphi=lambda x: 1 - 2 * np.asarray(x),
        dpsi=lambda x: -2 * (1 - np.asarray(x)),
        d2phi=lambda x: -2.0 * np.ones_like(np.asarray(x, float)),
        d2psi=lambda x: 2.0 * np.ones_like(np.asarray(x, float)),
        d3phi=lambda x: np.zeros_like(np.asarray(x, float)),
        d3psi=lambda x: np.zeros_like(np.asarray(x, float)),
        dphi1=-1.0, dpsi1=0.0, d2phi1=-2.0, d2psi1=2.0, d3phi1=0.0, d3psi1=0.0,
    )
    rep = validate_structure(cs)
    assert "E1_slope" in rep.failures()


def test_geometry_alpha_one_carr_penrose_f():
    d = build_geometry(make_lsw_coefficients(1.0))
    assert d.carr_penrose
    xs = np.array([0.0, 0.25, 0.5, 0.9])
    assert np.allclose(d.f(xs), 1.0 / (1.0 - xs), rtol=1e-11)
    assert d.f0 == pytest.approx(1.0, rel=1e-11)


def test_geometry_alpha_half_closed_forms(d05):
    e = np.e
    assert d05.f0 == pytest.approx(e / 2, rel=1e-9)
    assert d05.alpha0 == pytest.approx(0.25, abs=1e-14)
    assert d05.epsilon0 == pytest.approx(2 * e, rel=1e-9)
    xs = np.linspace(0.0, 0.999, 37)
    sx = np.sqrt(xs)
    f_exact = np.exp(1 - sx) / (2 * (1 - sx))
    assert np.max(np.abs(d05.f(xs) - f_exact) / f_exact) < 1e-9
    h_exact = np.exp(1 - sx)
    assert np.max(np.abs(d05.h_of_x(xs) - h_exact) / h_exact) < 1e-9
    # h satisfies y = 2h / log h on its whole parametric range
    ys = np.geomspace(d05.epsilon0, d05.y_of_x(0.95), 20)
    hy = d05.h(ys)
    assert np.max(np.abs(ys - 2 * hy / np.log(hy)) / ys) < 1e-10


@pytest.mark.parametrize("alpha", [0.2, 1.0 / 3.0, 0.5, 0.8])
def test_alpha0_matches_symbolic_value(alpha):
    d = build_geometry(make_lsw_coefficients(alpha))
    assert abs(d.alpha0 - (1 - alpha) / 2) < 1e-10


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8])
def test_h_tail_limit_is_one(alpha):
    d = build_geometry(make_lsw_coefficients(alpha))
    big_y = d.y_of_x(1 - 2.0 ** -18)
    assert abs(d.h(np.array([big_y]))[0] - 1.0) < 1e-4


def test_f_inverse_roundtrip(d05, rng):
    xs = rng.uniform(0.0, 0.999, 100)
    assert np.max(np.abs(d05.f_inverse(d05.f(xs)) - xs)) < 1e-12


def test_h_over_y_supremum_at_left_endpoint(d05, cs05):
    assert d05.h(np.array([d05.epsilon0]))[0] / d05.epsilon0 + cs05.dphi1 == \
        pytest.approx(0.0, abs=1e-10)
    ys = np.geomspace(d05.epsilon0, d05.y_max, 400)
    ratio = d05.h(ys) / ys
    assert np.argmax(ratio) == 0


def test_h_derivative_tail_decay(d05):
    y_big = d05.y_of_x(1 - 2.0 ** -20)
    assert abs(d05.h_prime(np.array([y_big]))[0]) < 1e-10
    assert abs(y_big ** 2 * d05.h_double_prime(np.array([y_big]))[0]) < 1e-5


@pytest.mark.parametrize("alpha,expected", [(0.5, 4.0)])
def test_cubic_tail_constant_of_curvature(alpha, expected):
    # for the power pair, y^3 h'' tends to
    # [phi'''(1) psi'(1) - phi'(1) psi'''(1)] / (3 alpha0^2 psi'(1))
    cs = make_lsw_coefficients(alpha)
    d = build_geometry(cs)
    const = (cs.d3phi1 * cs.dpsi1 - cs.dphi1 * cs.d3psi1) / (3 * d.alpha0 ** 2 * cs.dpsi1)
    assert const == pytest.approx(expected)
    y_big = d.y_of_x(1 - 2.0 ** -20)
    val = y_big ** 3 * d.h_double_prime(np.array([y_big]))[0]
    assert abs(val - const) / abs(const) < 0.05


def test_stability_conditions_alpha_half(d05, cs05):
    rep = check_stability_conditions(d05, cs05, p_list=(0.1, 1.0, 10.0))
    assert rep.k8_monotone
    assert rep.l8_monotone
    assert all(rep.i4_per_p.values())
    assert rep.i4_all_p_direct
    assert rep.equivalence_ok
    assert all(rep.chain.values())


def test_stability_conditions_alpha_07_chain():
    cs = make_lsw_coefficients(0.7)
    d = build_geometry(cs)
    rep = check_stability_conditions(d, cs, p_list=(1.0,))
    assert rep.chain["L8_chain_g3pp"]
    assert rep.passed


def test_unit_drift_i4_value_exactly_zero():
    ud = unit_drift()
    ys = np.geomspace(1.0, 100.0, 50)
    h, hp, hpp = ud.h(ys), ud.h_prime(ys), ud.h_double_prime(ys)
    term = (ys / 1.0 + h) * ys * hpp + hp * (h - ys * hp)
    assert np.all(term == 0.0)
    rep = check_stability_conditions(ud, None, p_list=(1.0,))
    assert rep.i4_per_p[1.0]


def test_i4_reports_match_k8_for_each_p(d05, cs05):
    rep = check_stability_conditions(d05, cs05, p_list=(0.1, 1.0, 10.0))
    # K8 certifies the all-p version which implies every finite p
    for p, ok in rep.i4_per_p.items():
        assert ok == rep.k8_monotone, f"disagreement at p={p}"
