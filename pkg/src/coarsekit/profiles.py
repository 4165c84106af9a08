"""Cluster densities on [0,1]: tail integrals, beta functions, special profiles.

A profile stores the density c, the tail integral w, the double tail h, all
normalized so h(0) = 1 (the conservation law), with the original mass kept as
metadata.  The beta function c*h/w^2 is the central shape diagnostic; its
endpoint limit beta0 classifies the data (subcritical iff beta0 < 1) and sets
the tail exponent p = beta0/(1-beta0) of w ~ (support-x)^p.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from .errors import DegenerateProfile, DomainError, ReachabilityError
from .gridutil import (
    cumulative_right_integral,
    gauss_panels,
    graded_01_grid,
    loglog_slope,
    power_tail_integral,
    write_csv,
)


@dataclass(frozen=True)
class DensityProfile:
    x: np.ndarray
    c: np.ndarray
    w: np.ndarray
    h: np.ndarray
    mass: float            # integral of w before normalization
    support: float
    meta: dict = field(default_factory=dict)

    def to_csv(self, path, beta=None, manifest_hash=None):
        b = beta if beta is not None else np.full_like(self.x, np.nan)
        write_csv(path, ["x", "c", "w", "h", "beta"],
                  [self.x, self.c, self.w, self.h, b],
                  manifest_hash=manifest_hash)


@dataclass(frozen=True)
class BetaData:
    beta: np.ndarray
    beta0: float
    p: float
    holder: Optional[tuple]       # (exponent, 2-sigma halfwidth) or None
    bounds: tuple
    subcritical: bool
    pinched: bool                 # 0 < inf beta <= sup beta < 1


@dataclass(frozen=True)
class StationaryProfile:
    kappa: float
    profile: DensityProfile
    beta: BetaData
    p: float
    chi_sup: float
    beta_chi_at_0: float
    chi_grid: np.ndarray
    chi_cdf: np.ndarray


def classify(beta_data):
    """'subcritical', 'critical', or 'unknown' from the tail limit."""
    b0 = beta_data.beta0
    if not np.isfinite(b0):
        return "unknown"
    if b0 < 1.0 - 1e-9:
        return "subcritical"
    return "critical"


def _beta0_extrapolate(x, beta, support):
    """Tail limit of beta by linear-in-u extrapolation over the last 10%."""
    u = support - x
    sel = (u > 0) & (u <= 0.1 * support) & np.isfinite(beta)
    if sel.sum() < 4:
        good = np.isfinite(beta)
        return float(beta[good][-1]) if good.any() else float("nan")
    uu, bb = u[sel], beta[sel]
    A = np.vstack([np.ones_like(uu), uu]).T
    coef, *_ = np.linalg.lstsq(A, bb, rcond=None)
    return float(coef[0])


def _holder_estimate(x, beta, beta0, support):
    u = support - x
    dev = np.abs(beta - beta0)
    sel = (u > 0) & (u < 0.2 * support) & (dev > 1e-10) & np.isfinite(dev)
    if sel.sum() < 6:
        return None
    slope, half = loglog_slope(u[sel], dev[sel])
    if not np.isfinite(slope) or slope <= 0:
        return None
    return (slope, half)


def analyze_density(x, c):
    """Build the normalized profile and its beta data from density samples."""
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    if x.ndim != 1 or x.shape != c.shape or x.size < 8:
        raise DomainError("need matching 1-d arrays with >= 8 samples")
    if x[0] != 0.0 or np.any(np.diff(x) <= 0) or x[-1] >= 1.0:
        raise DomainError("grid must satisfy 0 = x0 < ... < xN < 1")
    if np.any(c < 0):
        raise DomainError("density must be non-negative")
    if not np.any(c > 0):
        raise DomainError("density vanishes identically")

    # data positive up to the grid end is read as supported on all of [0,1],
    # closed by a power-law tail; otherwise the support ends where c does
    if c[-1] > 0:
        support, close_tail = 1.0, True
    else:
        support, close_tail = float(x[np.nonzero(c > 0)[0][-1]]), False
    pos = np.nonzero(c > 0)[0]
    zero_run = np.nonzero((c[pos[0]:pos[-1]] == 0)
                          & (c[pos[0] + 1:pos[-1] + 1] == 0))[0]
    if zero_run.size:
        raise DegenerateProfile(
            f"density vanishes on an interval inside the support near "
            f"x={x[pos[0] + zero_run[0]]:.6g}")
    w = cumulative_right_integral(x, c, support=support, tail=close_tail)
    h = cumulative_right_integral(x, w, support=support, tail=close_tail)
    inner_zero = (w <= 0) & (x < support)
    if np.any(inner_zero):
        raise DegenerateProfile(
            f"tail integral vanishes inside the support at x={x[np.argmax(inner_zero)]:.6g}")

    mass = float(h[0])
    c, w, h = c / mass, w / mass, h / mass

    with np.errstate(divide="ignore", invalid="ignore"):
        beta = np.where(w > 0, c * h / np.maximum(w, 1e-300) ** 2, np.nan)
    beta0 = _beta0_extrapolate(x, beta, support)
    finite = beta[np.isfinite(beta)]
    prof = DensityProfile(x=x, c=c, w=w, h=h, mass=mass, support=support,
                          meta={"kind": "samples"})
    bd = BetaData(
        beta=beta, beta0=beta0,
        p=beta0 / (1.0 - beta0) if 0 < beta0 < 1 else float("inf"),
        holder=_holder_estimate(x, beta, beta0, support),
        bounds=(float(finite.min()), float(finite.max())),
        subcritical=bool(np.isfinite(beta0) and beta0 < 1.0 - 1e-9),
        pinched=bool(finite.min() > 0 and finite.max() < 1),
    )
    return prof, bd


def uniform_profile(n=1200):
    """The flat density c = 2 on [0,1]; w = 2(1-x), h = (1-x)^2, beta = 1/2."""
    x = graded_01_grid(n_left=n // 2)
    u = 1.0 - x
    prof = DensityProfile(
        x=x, c=np.full_like(x, 2.0), w=2.0 * u, h=u * u, mass=1.0, support=1.0,
        meta={"kind": "uniform"})
    return prof


def power_law_data(d, p):
    """Initial data w = K_p / f^p with K_p fixed by unit mass."""
    if p <= 0:
        raise DomainError("p must be positive")
    edges = np.concatenate((np.linspace(0, 0.9, 200),
                            1.0 - np.geomspace(1e-9, 0.1, 160)[::-1]))
    gx, gw = gauss_panels(np.unique(edges), order=10)
    vg = -np.log1p(-gx)
    finv_p = np.exp(-p * (vg - d._Rv(vg)))     # f^{-p}
    Kp = 1.0 / float(np.sum(finv_p * gw))
    # mild tail closing: integrand ~ u^p
    x = graded_01_grid()
    v = -np.log1p(-x)
    u = np.exp(-v)
    w = Kp * np.exp(-p * (v - d._Rv(v)))
    cs = d.cs
    c = p * Kp * (-cs.dpsi1) * np.exp(p * d._Rv(v)) * u ** p / cs.psi_u(x, u)
    h = cumulative_right_integral(x, w, support=1.0, tail=True)
    tail_mass = power_tail_integral(x, w, 1.0)
    mass = float(np.trapezoid(w, x) + tail_mass)
    prof = DensityProfile(x=x, c=c / h[0], w=w / h[0], h=h / h[0],
                          mass=float(h[0]), support=1.0,
                          meta={"kind": "power_law", "p": float(p), "Kp": Kp,
                                "drift": d, "raw_mass": mass})
    return prof


def _kappa_threshold(cs):
    return -cs.dphi1 / abs(cs.dpsi1)


def stationary_profile(cs, kappa, drift=None):
    """Time-independent solution w_kappa and its beta function.

    w_kappa(x) = exp[-int_0^x dt/(kappa psi - phi)] up to the h(0) = 1
    normalization; defined only when kappa psi - phi > 0 on (0,1), i.e. for
    kappa above -phi'(1)/|psi'(1)|.
    """
    if kappa <= _kappa_threshold(cs):
        raise ReachabilityError(
            f"kappa={kappa:g} at or below threshold {_kappa_threshold(cs):g}")
    c_exp = kappa * abs(cs.dpsi1) + cs.dphi1    # kappa*psi-phi ~ c_exp*(1-x)
    p = 1.0 / c_exp

    probe = np.linspace(1e-6, 1 - 1e-6, 2001)
    denom = kappa * cs.psi(probe) - cs.phi(probe)
    if np.any(denom <= 0):
        raise ReachabilityError("kappa*psi - phi vanishes inside (0,1)")

    def reg(t):
        t = np.asarray(t, dtype=float)
        u = 1.0 - t
        dd = kappa * cs.psi_u(t, u) - cs.phi_u(t, u)
        return (c_exp * u - dd) / (dd * c_exp * u)

    edges = np.unique(np.concatenate((
        np.geomspace(1e-10, 0.1, 60), np.linspace(0.1, 0.9, 200),
        1.0 - np.geomspace(1e-10, 0.1, 200)[::-1], [0.0])))
    gx, gw = gauss_panels(edges, order=10)
    vals = reg(gx) * gw
    panel = np.add.reduceat(vals, np.arange(0, vals.size, 10))
    S = np.concatenate(([0.0], np.cumsum(panel)))   # S(x_k) = int_0^{x_k} reg
    S_spl = CubicSpline(-np.log1p(-edges), S)

    x = graded_01_grid()
    v = -np.log1p(-x)
    u = np.exp(-v)
    w = np.exp(-p * v - S_spl(v))                  # u^{p} * exp(-int reg)
    c = w / (kappa * cs.psi_u(x, u) - cs.phi_u(x, u))
    h = cumulative_right_integral(x, w, support=1.0, tail=False)
    h += w[-1] * u[-1] / (p + 1.0)                 # exact tail exponent
    h0 = float(h[0])
    c, w, h = c / h0, w / h0, h / h0

    with np.errstate(divide="ignore", invalid="ignore"):
        beta = np.where(w > 0, c * h / w ** 2, np.nan)
    beta0 = p / (1.0 + p)
    finite = beta[np.isfinite(beta)]
    bd = BetaData(beta=beta, beta0=beta0, p=p,
                  holder=_holder_estimate(x, beta, beta0, 1.0),
                  bounds=(float(finite.min()), float(finite.max())),
                  subcritical=beta0 < 1.0, pinched=bool(finite.min() > 0 and finite.max() < 1))
    prof = DensityProfile(x=x, c=c, w=w, h=h, mass=h0, support=1.0,
                          meta={"kind": "stationary", "kappa": float(kappa),
                                "p": p, "S_spline": S_spl, "norm": h0, "cs": cs})

    chi_sup = float(w[0])
    m = 1.0 / chi_sup
    # cdf of the mean-1 self-similar variable on [0, chi_sup]
    chi_grid = np.linspace(0.0, chi_sup, 2001)
    w_fn = PchipInterpolator(x, w)
    inner = np.clip(chi_grid * m, 0.0, x[-1])
    chi_cdf = 1.0 - w_fn(inner) / w[0]
    chi_cdf[-1] = 1.0
    beta_chi_at_0 = float(beta[0])
    return StationaryProfile(kappa=float(kappa), profile=prof, beta=bd, p=p,
                             chi_sup=chi_sup, beta_chi_at_0=beta_chi_at_0,
                             chi_grid=chi_grid, chi_cdf=chi_cdf)


def self_similar_physical(sp):
    """Physical-variable view of the stationary profile.

    Returns (chi_cdf_pair, beta_chi_at_0, chi_sup) where chi_cdf_pair is the
    (grid, cdf) table of the mean-1 self-similar variable.
    """
    mean = float(np.trapezoid(1.0 - sp.chi_cdf, sp.chi_grid))
    if abs(mean - 1.0) > 1e-4:
        raise DomainError(f"self-similar mean deviates from 1: {mean}")
    return (sp.chi_grid, sp.chi_cdf), sp.beta_chi_at_0, sp.chi_sup


class ProfileFunctions:
    """Evaluators of a profile in the tail variable u = support - x.

    Exact closures for the built-in kinds; monotone-spline plus power-law
    tail for sampled data.  Used by the transformed-system functionals where
    arguments approach the support endpoint at machine-scale distances.
    """

    def __init__(self, w_of_u, c_of_u, h_of_u, beta_of_u, beta0, p):
        self.w_of_u = w_of_u
        self.c_of_u = c_of_u
        self.h_of_u = h_of_u
        self.beta_of_u = beta_of_u
        self.beta0 = float(beta0)
        self.p = float(p)


def profile_functions(profile, beta_data=None):
    kind = profile.meta.get("kind", "samples")
    if kind == "uniform":
        return ProfileFunctions(
            w_of_u=lambda u: 2.0 * np.asarray(u, float),
            c_of_u=lambda u: np.full_like(np.asarray(u, float), 2.0),
            h_of_u=lambda u: np.asarray(u, float) ** 2,
            beta_of_u=lambda u: np.full_like(np.asarray(u, float), 0.5),
            beta0=0.5, p=1.0)

    if kind == "power_law":
        d = profile.meta["drift"]
        p = profile.meta["p"]
        Kp = profile.meta["Kp"] / profile.mass
        cs = d.cs

        def w_of_u(u):
            u = np.asarray(u, dtype=float)
            v = -np.log(np.maximum(u, 1e-300))
            return Kp * np.exp(-p * (v - d._Rv(v)))

        def c_of_u(u):
            u = np.asarray(u, dtype=float)
            v = -np.log(np.maximum(u, 1e-300))
            x = -np.expm1(-v)
            return p * Kp * (-cs.dpsi1) * np.exp(p * d._Rv(v)) * u ** p / cs.psi_u(x, u)

        h_spl, u_lo = _log_h_spline(w_of_u, p)

        def h_of_u(u):
            u = np.asarray(u, dtype=float)
            out = np.exp(h_spl(np.log(np.maximum(u, u_lo))))
            small = u < u_lo
            if np.any(small):
                out = np.where(small, w_of_u(u) * u / (p + 1.0), out)
            return out

        def beta_of_u(u):
            u = np.asarray(u, dtype=float)
            return c_of_u(u) * h_of_u(u) / w_of_u(u) ** 2

        return ProfileFunctions(w_of_u, c_of_u, h_of_u, beta_of_u,
                                beta0=p / (1.0 + p), p=p)

    if kind == "stationary":
        S_spl = profile.meta["S_spline"]
        p = profile.meta["p"]
        norm = profile.meta["norm"]
        kappa = profile.meta["kappa"]
        cs_ref = profile.meta.get("cs")

        def w_of_u(u):
            u = np.asarray(u, dtype=float)
            v = -np.log(np.maximum(u, 1e-300))
            return np.exp(-p * v - S_spl(np.minimum(v, S_spl.x[-1]))) / norm

        def c_of_u(u):
            u = np.asarray(u, dtype=float)
            x = 1.0 - u
            return w_of_u(u) / (kappa * cs_ref.psi_u(x, u) - cs_ref.phi_u(x, u))

        h_spl, u_lo = _log_h_spline(w_of_u, p)

        def h_of_u(u):
            u = np.asarray(u, dtype=float)
            out = np.exp(h_spl(np.log(np.maximum(u, u_lo))))
            small = u < u_lo
            if np.any(small):
                out = np.where(small, w_of_u(u) * u / (p + 1.0), out)
            return out

        def beta_of_u(u):
            return c_of_u(u) * h_of_u(u) / w_of_u(u) ** 2

        return ProfileFunctions(w_of_u, c_of_u, h_of_u, beta_of_u,
                                beta0=p / (1.0 + p), p=p)

    # sampled data: monotone splines in log-log with a fitted power tail
    if beta_data is None:
        raise DomainError("sampled profiles need their BetaData")
    x, w, c, h = profile.x, profile.w, profile.c, profile.h
    keep = w > 0
    u_s = profile.support - x[keep]
    order = np.argsort(u_s)
    u_s, w_s, h_s = u_s[order], w[keep][order], h[keep][order]
    p = beta_data.p if np.isfinite(beta_data.p) else 1.0
    lw = PchipInterpolator(np.log(u_s[u_s > 0]), np.log(w_s[u_s > 0]))
    lh = PchipInterpolator(np.log(u_s[u_s > 0]), np.log(np.maximum(h_s[u_s > 0], 1e-300)))
    u_min = float(u_s[u_s > 0][0])
    w_min = float(w_s[u_s > 0][0])
    h_min = float(h_s[u_s > 0][0])

    def w_of_u(u):
        u = np.asarray(u, dtype=float)
        out = np.exp(lw(np.log(np.clip(u, u_min, u_s[-1]))))
        small = u < u_min
        if np.any(small):
            out = np.where(small, w_min * (u / u_min) ** p, out)
        return out

    def h_of_u(u):
        u = np.asarray(u, dtype=float)
        out = np.exp(lh(np.log(np.clip(u, u_min, u_s[-1]))))
        small = u < u_min
        if np.any(small):
            out = np.where(small, h_min * (u / u_min) ** (p + 1.0), out)
        return out

    beta_sorted = beta_data.beta[keep][order]
    bsel = (u_s > 0) & np.isfinite(beta_sorted)
    b_interp = PchipInterpolator(np.log(u_s[bsel]), beta_sorted[bsel])

    def beta_of_u(u):
        u = np.asarray(u, dtype=float)
        out = b_interp(np.log(np.clip(u, u_min, u_s[-1])))
        return np.where(u < u_min, beta_data.beta0, out)

    def c_of_u(u):
        # via the beta relation beta w^2 = c h to avoid differencing
        return beta_of_u(u) * w_of_u(u) ** 2 / h_of_u(u)

    return ProfileFunctions(w_of_u, c_of_u, h_of_u, beta_of_u,
                            beta0=beta_data.beta0, p=p)


def _log_h_spline(w_of_u, p, u_lo=1e-11):
    """Cumulative tail integral h(u) = int_0^u w as a log-log spline."""
    edges = np.geomspace(u_lo, 1.0, 600)
    gx, gw = gauss_panels(edges, order=8)
    vals = w_of_u(gx) * gw
    panel = np.add.reduceat(vals, np.arange(0, vals.size, 8))
    seed = w_of_u(np.array([u_lo]))[0] * u_lo / (p + 1.0)
    h_vals = seed + np.concatenate(([0.0], np.cumsum(panel)))
    return CubicSpline(np.log(edges), np.log(h_vals)), u_lo


def beta_identity_residual(profile, beta_data):
    """Max residual of h/w = int_x^support (1-beta) on the profile grid."""
    x, w, h = profile.x, profile.w, profile.h
    beta = beta_data.beta
    good = np.isfinite(beta) & (w > 0)
    rhs = cumulative_right_integral(x[good], 1.0 - beta[good],
                                    support=profile.support, tail=False)
    return float(np.max(np.abs(h[good] / w[good] - rhs)))


def rebuild_h_from_beta(profile, beta_data):
    """Reconstruct h from the beta function via the double-exponential formula."""
    x, beta = profile.x, beta_data.beta
    good = np.isfinite(beta)
    xg, bg = x[good], beta[good]
    T = cumulative_right_integral(xg, 1.0 - bg, support=profile.support, tail=False)
    with np.errstate(divide="ignore"):
        integrand = np.where(T > 0, 1.0 / T, 0.0)
    inner = np.concatenate(([0.0], np.cumsum(
        0.5 * (integrand[1:] + integrand[:-1]) * np.diff(xg))))
    return xg, profile.h[good][0] * np.exp(-inner)
