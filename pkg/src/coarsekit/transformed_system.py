"""Functionals, equilibrium, and the fixed-point solver of the transformed flow.

The transformed unknown xi lives on [epsilon0, oo).  The conserved integral
I(zeta, eta) (and its eta -> 0 limit I_p) is evaluated by x-quadrature after
the change of variable that maps y back to x through f; the induced rate
functional rho drives both the scalar conservation identity and the evolution
solver.  The evolution itself is solved window by window: a contraction
iteration on continuous rho-paths, each iterate integrating the backward
characteristics and reassembling xi and its slope from the explicit
representation formulas.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from .errors import ConfigError, DegenerateDenominator, DomainError, NoContraction
from .gridutil import gauss_panels
from .profiles import profile_functions

_U_QUAD = 1e-7          # x-quadrature grading depth at both endpoints


@dataclass
class XiState:
    ys: np.ndarray
    xi: np.ndarray
    dxi: np.ndarray
    t: float
    eta: float


@dataclass
class FunctionalValues:
    I: float                     # the conserved integral at (zeta, eta)
    grad_density: np.ndarray     # d_zeta I on the quadrature nodes
    numerator: float             # I + [d_zeta I, h + h Dzeta]
    denominator: float           # p I + eta dI/deta + [d_zeta I, zeta - y Dzeta]
    p_I_plus_eta_dI: float
    rho: float
    eta: Optional[float]


class XiFunction:
    """xi given by node samples with a constant far tail; callable pair."""

    def __init__(self, ys, xi, dxi, tail_value=None):
        self.ys = np.asarray(ys, dtype=float)
        self.xi_values = np.asarray(xi, dtype=float)
        self.dxi_values = np.asarray(dxi, dtype=float)
        self.tail_value = float(self.xi_values[-1] if tail_value is None
                                else tail_value)
        ly = np.log(self.ys)
        self._xi = PchipInterpolator(ly, self.xi_values, extrapolate=False)
        self._dxi = PchipInterpolator(ly, self.dxi_values, extrapolate=False)

    def xi(self, y):
        y = np.asarray(y, dtype=float)
        out = self._xi(np.log(np.clip(y, self.ys[0], None)))
        return np.where(np.isnan(out), self.tail_value, out)

    def dxi(self, y):
        y = np.asarray(y, dtype=float)
        out = self._dxi(np.log(np.clip(y, self.ys[0], None)))
        return np.where(np.isnan(out), 0.0, out)


def constant_xi(value, ys, t=0.0, eta=1.0):
    ys = np.asarray(ys, dtype=float)
    return XiState(ys=ys, xi=np.full_like(ys, float(value)),
                   dxi=np.zeros_like(ys), t=t, eta=eta)


class FunctionalContext:
    """Quadrature home of the conserved functionals for one (drift, p, data).

    Caches the x-nodes, the values of f there, and the initial-data
    evaluators in the tail variable; all functional evaluations are then
    vectorized over the cached nodes.
    """

    def __init__(self, drift, p, profile=None, beta_data=None,
                 order=8, u_min=_U_QUAD):
        if p <= 0:
            raise DomainError("p must be positive")
        self.drift = drift
        self.p = float(p)
        self.cs = drift.cs
        edges = np.unique(np.concatenate((
            [0.0], np.geomspace(u_min, 0.2, 48), np.linspace(0.2, 0.8, 31)[1:-1],
            1.0 - np.geomspace(u_min, 0.2, 72)[::-1])))
        self.x_nodes, self.x_weights = gauss_panels(edges, order=order)
        self.vx = -np.log1p(-self.x_nodes)
        self.ux = np.exp(-self.vx)
        self.log_f = self.vx - drift._Rv(self.vx)
        self.f = np.exp(self.log_f)
        self.y_nodes = self.f / drift.alpha0
        self.h_nodes = drift.h_of_x(self.x_nodes, self.ux)
        self.psi_nodes = self.cs.psi_u(self.x_nodes, self.ux)
        self.a_nodes = drift.a_of_x(self.x_nodes, self.ux)
        # the (J2) normalization for this p and drift
        self.Kp = 1.0 / float(np.sum(np.exp(-self.p * self.log_f) * self.x_weights))
        self.pf = None
        if profile is not None:
            self.pf = profile_functions(profile, beta_data)
        # reduced node set for characteristic integration
        eps0 = drift.epsilon0
        y_top = float(self.y_nodes[-1])
        self.char_ys = np.unique(np.concatenate((
            eps0 * (1.0 + np.geomspace(1e-9, 0.2, 48)),
            np.geomspace(eps0 * 1.2, y_top, 220), [y_top])))

    # -- helpers ------------------------------------------------------------

    def sample(self, fn_or_values):
        if callable(fn_or_values):
            return np.asarray(fn_or_values(self.y_nodes), dtype=float)
        vals = np.asarray(fn_or_values, dtype=float)
        if vals.shape != self.y_nodes.shape:
            raise DomainError("node array has wrong shape; pass a callable")
        return vals

    def gamma_u(self, zeta_nodes, eta):
        """u-coordinate of the change-of-variable point on each node."""
        z = (self.f + self.drift.alpha0 * zeta_nodes) / eta
        v = self.drift._v_of_log_f(np.log(z))
        return np.exp(-v), -np.expm1(-v)

    def g_factor(self, u_gamma, x_gamma):
        """-psi(G) beta0(G) w0(G) / (psi'(1) h0(G)) on the nodes."""
        pf = self.pf
        if pf is None:
            raise ConfigError("context built without initial data")
        w0 = pf.w_of_u(u_gamma)
        h0 = pf.h_of_u(u_gamma)
        beta = pf.beta_of_u(u_gamma)
        psi_g = self.cs.psi_u(x_gamma, u_gamma)
        return -psi_g * beta * w0 / (self.cs.dpsi1 * h0), w0


def evaluate_functionals(zeta, eta, ctx, dzeta=None):
    """The conserved integral, its gradient pieces, and the rate functional.

    eta=None selects the limiting power-law pathway; otherwise 0 < eta <= 1.
    Gradient-dependent outputs need dzeta with 1 + Dzeta >= 0.
    """
    zn = ctx.sample(zeta)
    if np.any(zn < -1e-12):
        raise DomainError("zeta must be non-negative")
    dn = ctx.sample(dzeta) if dzeta is not None else None
    if dn is not None and np.any(1.0 + dn < -1e-9):
        raise DomainError("1 + Dzeta must be non-negative")
    p, a0 = ctx.p, ctx.drift.alpha0
    denom_fz = ctx.f + a0 * zn

    # `weight` is defined so that [d_zeta I, G] = -sum(weight * G(y_nodes))
    if eta is None:
        base = ctx.Kp * np.exp(-p * np.log(denom_fz))
        I = float(np.sum(base * ctx.x_weights))
        weight = ctx.Kp * p * a0 / denom_fz ** (p + 1.0) * ctx.x_weights
    else:
        if not (0.0 < eta <= 1.0):
            raise DomainError("eta must lie in (0, 1]")
        u_g, x_g = ctx.gamma_u(zn, eta)
        g_vals, w0_vals = ctx.g_factor(u_g, x_g)
        scale = eta ** (-p)
        I = float(scale * np.sum(w0_vals * ctx.x_weights))
        weight = scale * a0 * g_vals * w0_vals / denom_fz * ctx.x_weights
    grad = -weight * ctx.a_nodes / ctx.x_weights   # the density in y

    if dn is None:
        return FunctionalValues(I=I, grad_density=grad, numerator=np.nan,
                                denominator=np.nan, p_I_plus_eta_dI=np.nan,
                                rho=np.nan, eta=eta)

    numerator = I - float(np.sum(weight * ctx.h_nodes * (1.0 + dn)))
    denominator = float(np.sum(weight * ctx.f * (1.0 + dn))) / a0
    if eta is None:
        p_I_plus_eta_dI = p * I
    else:
        p_I_plus_eta_dI = float(eta ** (-p) * np.sum(
            g_vals * w0_vals * ctx.x_weights))
    if denominator <= 0.0:
        raise DegenerateDenominator(
            "positive rate denominator lost sign (should be unreachable)")
    rho_val = numerator / denominator
    return FunctionalValues(I=I, grad_density=grad, numerator=numerator,
                            denominator=denominator,
                            p_I_plus_eta_dI=p_I_plus_eta_dI,
                            rho=rho_val, eta=eta)


def rho(zeta, dzeta, eta, ctx):
    """The rate functional at positive eta."""
    return evaluate_functionals(zeta, eta, ctx, dzeta=dzeta).rho


def rho_p(zeta, dzeta, ctx):
    """The limiting rate functional (power-law pathway)."""
    return evaluate_functionals(zeta, None, ctx, dzeta=dzeta).rho


# -- equilibrium ---------------------------------------------------------------


@dataclass
class Equilibrium:
    p: float
    drift: object
    ys: np.ndarray
    xi_values: np.ndarray
    h_values: np.ndarray
    _dense: object = field(repr=False, default=None)
    y_tail: float = 0.0
    tail_limit: float = 0.0

    def xi(self, y):
        y = np.asarray(y, dtype=float)
        inside = y <= self.y_tail
        out = np.empty_like(y)
        if np.any(inside):
            T, S = self._dense(np.log(y[inside]))
            out[inside] = y[inside] * np.exp(T) * S
        if np.any(~inside):
            # far-field: xi - p h_inf ~ (p/2)(h - h_inf) from the linearized
            # equilibrium balance with h - h_inf ~ 1/y
            h_far = self.drift.h(y[~inside])
            out[~inside] = self.tail_limit \
                + 0.5 * self.p * (h_far - self.drift.h_infinity)
        return out

    def dxi(self, y):
        y = np.asarray(y, dtype=float)
        h = self.drift.h(np.maximum(y, self.drift.epsilon0))
        return (self.xi(y) - self.p * h) / (self.p * h + y)


def equilibrium_xi_p(d, p, y_big=None, rtol=1e-12):
    """Equilibrium profile from the integrating-factor representation.

    The integrating factor h~ solves h~'/h~ = 1/(p h + y) normalized so
    h~(y)/y -> 1; the equilibrium is its weighted tail integral.  Both tail
    integrals are integrated adaptively in log y from a far anchor where the
    closed h = h_inf forms hold; the slope comes from the equilibrium ODE
    identity.
    """
    from scipy.integrate import solve_ivp

    if p <= 0:
        raise DomainError("p must be positive")
    eps0 = d.epsilon0
    if not np.isfinite(eps0):
        raise DomainError("drift geometry unavailable")
    if y_big is None:
        y_big = min(getattr(d, "y_max", np.inf), 1e9)
        if not np.isfinite(y_big):
            y_big = 1e9
    hinf = d.h_infinity

    def rhs(tau, state):
        y = np.exp(tau)
        h = float(d.h(np.array([max(y, eps0)]))[0])
        T = state[0]
        core = p * h / (p * h + y)
        return [-core, -core / np.exp(T)]

    T_big = float(np.log1p(p * hinf / y_big))
    S_big = p * hinf / (y_big + p * hinf)
    sol = solve_ivp(rhs, (np.log(y_big), np.log(eps0)), [T_big, S_big],
                    method="DOP853", rtol=rtol, atol=1e-14,
                    dense_output=True)
    if not sol.success:
        raise ConfigError("equilibrium tail integration failed: " + sol.message)

    ys = np.geomspace(eps0, y_big, 400)
    T, S = sol.sol(np.log(ys))
    eq = Equilibrium(p=float(p), drift=d, ys=ys,
                     xi_values=ys * np.exp(T) * S, h_values=d.h(ys),
                     _dense=sol.sol, y_tail=float(y_big),
                     tail_limit=float(p * hinf))
    return eq


# -- evolution -----------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    rho: np.ndarray
    eta: np.ndarray
    norm_sup: np.ndarray
    norm_y_dxi: np.ndarray
    inf_one_plus_dxi: np.ndarray
    dist_to_equilibrium: np.ndarray
    states: list
    contraction: list
    bounds_flags: list = field(default_factory=list)

    def time_average_rho(self, frac=0.5):
        t0 = self.times[0] + frac * (self.times[-1] - self.times[0])
        sel = self.times >= t0
        return float(np.trapezoid(self.rho[sel], self.times[sel])
                     / (self.times[-1] - t0))

    def to_csv(self, path, manifest_hash=None):
        from .gridutil import write_csv
        write_csv(path, ["t", "eta", "rho", "norm1inf", "dist_xi_p"],
                  [self.times, self.eta, self.rho,
                   self.norm_sup + self.norm_y_dxi, self.dist_to_equilibrium],
                  manifest_hash=manifest_hash)


def _char_backward(ys_end, t_lo, t_hi, rho_times, rho_vals, d, n_sub=None):
    """Backward characteristics from (ys_end, t_hi) down to t_lo.

    Returns y(t_lo), int rho ds, int h'(y(s)) ds and the inhomogeneous term
    int h(y(s)) exp(-int_s^t rho) ds of the representation formula.  The
    slope integral is accumulated through the exact h-difference per substep
    (int h' ds = int dh / ydot), which stays accurate even though h' blows up
    at the left endpoint.
    """
    if n_sub is None:
        n_sub = max(16, int((t_hi - t_lo) / 8e-3))
    dt = (t_hi - t_lo) / n_sub
    eps0 = d.epsilon0
    rho_f = lambda s: np.interp(s, rho_times, rho_vals)
    h_of = d.h_fast if hasattr(d, "h_fast") else d.h

    y = np.array(ys_end, dtype=float)
    int_hp = np.zeros_like(y)
    int_term = np.zeros_like(y)
    int_rho_running = 0.0      # int_s^{t_hi} rho
    h_cur = h_of(np.maximum(y, eps0))

    s = t_hi
    for _ in range(n_sub):
        # RK4 backwards in time (negate the vector field)
        r1, r2, r4 = rho_f(s), rho_f(s - 0.5 * dt), rho_f(s - dt)
        k1 = -h_cur - r1 * y
        y2 = np.maximum(y - 0.5 * dt * k1, eps0)
        h2 = h_of(y2)
        k2 = -h2 - r2 * y2
        y3 = np.maximum(y - 0.5 * dt * k2, eps0)
        h3 = h_of(y3)
        k3 = -h3 - r2 * y3
        y4 = np.maximum(y - dt * k3, eps0)
        h4 = h_of(y4)
        k4 = -h4 - r4 * y4
        y_new = np.maximum(y - dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), eps0)
        h_new = h_of(y_new)

        e1 = np.exp(-int_rho_running)
        e2 = np.exp(-(int_rho_running + 0.25 * dt * (r1 + r2)))
        dint = dt * (r1 + 4 * r2 + r4) / 6.0
        e4 = np.exp(-(int_rho_running + dint))
        int_term += dt / 6.0 * (h_cur * e1 + 4 * h2 * e2 + h_new * e4)

        y_mid = 0.5 * (y + y_new)
        ydot_mid = -h_of(y_mid) - r2 * y_mid
        small = np.abs(ydot_mid) < 1e-14
        int_hp += np.where(small, 0.0, (h_cur - h_new) / np.where(
            small, 1.0, ydot_mid))
        int_rho_running += dint
        y, h_cur = y_new, h_new
        s -= dt
    return y, int_rho_running, int_hp, int_term


@dataclass
class WindowSolution:
    times: np.ndarray
    rho_path: np.ndarray
    xi: np.ndarray        # (n_times, n_nodes)
    dxi: np.ndarray
    contraction: list


def local_solve(xi0, eta_fn, T, ctx, nt=7, tol=1e-9, max_iter=30):
    """Contraction iteration on rho-paths over one window [t0, t0 + T].

    Each iterate integrates the backward characteristics and rebuilds xi and
    Dxi from the representation formulas; the new rho-path is the functional
    evaluated on the rebuilt profiles.  Failure to contract raises
    NoContraction (the caller shrinks T).
    """
    d = ctx.drift
    t0 = xi0.t
    xi_fn = XiFunction(xi0.ys, xi0.xi, xi0.dxi)
    rho0 = rho(xi_fn.xi, xi_fn.dxi, eta_fn(t0), ctx)
    floor = -d.h(np.array([d.epsilon0]))[0] / d.epsilon0
    eps_ball = min(0.1, 0.25 * (rho0 - floor))
    if eps_ball <= 0:
        raise NoContraction("initial rate already at the admissible floor")

    times = t0 + np.linspace(0.0, T, nt)
    rho_path = np.full(nt, rho0)
    history = []
    ys_c = ctx.char_ys
    xi_new = np.empty((nt, ys_c.size))
    dxi_new = np.empty_like(xi_new)
    xi_new[0] = xi_fn.xi(ys_c)
    dxi_new[0] = xi_fn.dxi(ys_c)
    for it in range(max_iter):
        rho_new = np.empty(nt)
        rho_new[0] = rho0
        for k in range(1, nt):
            y0, int_rho, int_hp, int_term = _char_backward(
                ys_c, t0, times[k], times, rho_path, d)
            xi_k = np.exp(-int_rho) * xi_fn.xi(y0) + int_term
            dxi_k = np.exp(int_hp) * (1.0 + xi_fn.dxi(y0)) - 1.0
            xi_new[k] = xi_k
            dxi_new[k] = dxi_k
            fn_k = XiFunction(ys_c, xi_k, dxi_k)
            rho_new[k] = rho(fn_k.xi, fn_k.dxi, eta_fn(times[k]), ctx)
        delta = float(np.max(np.abs(rho_new - rho_path)))
        history.append(delta)
        rho_path = rho_new
        if delta < tol:
            break
    else:
        raise NoContraction(f"no contraction after {max_iter} iterations")
    if np.max(np.abs(rho_path - rho0)) > eps_ball and T > 1e-3:
        raise NoContraction("rate left the contraction ball; shrink T")
    return WindowSolution(times=times, rho_path=rho_path, xi=xi_new,
                          dxi=dxi_new, contraction=history)


def evolve(xi0, eta_fn, t_max, ctx, window=0.5, nt=7, tol=1e-9,
           equilibrium=None, record_every=1):
    """Window-by-window continuation of the local solver up to t_max.

    Records the rate path, the weighted norms, and the distance to the
    equilibrium; windows halve on NoContraction.  Bound violations are
    flagged in bounds_flags, never silently swallowed.
    """
    d = ctx.drift
    if equilibrium is None:
        equilibrium = equilibrium_xi_p(d, ctx.p)
    ys_c = ctx.char_ys
    xi_eq = equilibrium.xi(ys_c)
    dxi_eq = equilibrium.dxi(ys_c)
    h_eps = d.h(np.array([d.epsilon0]))[0]

    state = xi0
    rec = {k: [] for k in ("t", "rho", "eta", "sup", "ydxi", "infd", "dist")}
    states, contraction, flags = [], [], []

    def record(t, xi_v, dxi_v, rho_v):
        rec["t"].append(t)
        rec["rho"].append(rho_v)
        rec["eta"].append(eta_fn(t))
        rec["sup"].append(float(np.max(np.abs(xi_v))))
        rec["ydxi"].append(float(np.max(np.abs(ys_c * dxi_v))))
        rec["infd"].append(float(np.min(1.0 + dxi_v)))
        dist = float(np.max(np.abs(xi_v - xi_eq))
                     + np.max(np.abs(ys_c * (dxi_v - dxi_eq))))
        rec["dist"].append(dist)
        if rho_v < -h_eps / d.epsilon0 - 1e-9:
            flags.append((t, "rate below admissible floor"))

    fn0 = XiFunction(state.ys, state.xi, state.dxi)
    xi_c = fn0.xi(ys_c)
    dxi_c = fn0.dxi(ys_c)
    rho_c = rho(fn0.xi, fn0.dxi, eta_fn(state.t), ctx)
    record(state.t, xi_c, dxi_c, rho_c)
    states.append(XiState(ys=ys_c.copy(), xi=xi_c, dxi=dxi_c,
                          t=state.t, eta=eta_fn(state.t)))

    t = state.t
    current = XiState(ys=ys_c.copy(), xi=xi_c, dxi=dxi_c, t=t,
                      eta=eta_fn(t))
    win = window
    while t < t_max - 1e-12:
        win_here = min(win, t_max - t)
        try:
            sol = local_solve(current, eta_fn, win_here, ctx, nt=nt, tol=tol)
        except NoContraction:
            win = win_here / 2.0
            if win < 1e-4:
                raise
            continue
        contraction.append(sol.contraction)
        for k in range(1, sol.times.size):
            if k % record_every == 0 or k == sol.times.size - 1:
                record(sol.times[k], sol.xi[k], sol.dxi[k], sol.rho_path[k])
        t = float(sol.times[-1])
        current = XiState(ys=ys_c.copy(), xi=sol.xi[-1],
                          dxi=sol.dxi[-1], t=t, eta=eta_fn(t))
        states.append(current)
        win = min(win * 1.3, window)

    return Trajectory(
        times=np.array(rec["t"]), rho=np.array(rec["rho"]),
        eta=np.array(rec["eta"]), norm_sup=np.array(rec["sup"]),
        norm_y_dxi=np.array(rec["ydxi"]),
        inf_one_plus_dxi=np.array(rec["infd"]),
        dist_to_equilibrium=np.array(rec["dist"]),
        states=states, contraction=contraction, bounds_flags=flags)


# -- cross-module reconstruction ----------------------------------------------


def xi_from_simulation_snapshot(snapshot, d):
    """Rebuild (y, xi, Dxi, eta) from a moving-grid snapshot.

    The snapshot carries positions, the characteristic feet, and the
    accumulated drift integral; everything is assembled in log space so the
    huge-f cancellations never materialize.
    """
    s, xs, ws, feet_v, log_u = snapshot
    keep = (xs > 1e-9) & (xs < 1.0)
    x = xs[keep]
    v = -np.log1p(-x)
    v0 = feet_v[keep]
    log_f_pos = v - d._Rv(v)
    log_f_foot = v0 - d._Rv(v0)
    delta = log_f_foot - log_f_pos - log_u
    y = np.exp(log_f_pos) / d.alpha0
    # reconstruction noise at huge y is O(y * du); the functionals damp it
    # by 1/f, but the profile itself must stay admissible
    xi = np.maximum(y * np.expm1(delta), 0.0)

    # 1 + Dxi = f(x0) psi(x) dx0/dx / (psi(x0) f(x) u(t));
    # dx0/dx = (u0/u) dv0/dv with dv0/dv from differencing the smooth feet
    dv0_dv = np.gradient(v0, v)
    u = np.exp(-v)
    u0 = np.exp(-v0)
    x0 = -np.expm1(-v0)
    cs = d.cs
    log_one_plus = (delta + np.log(cs.psi_u(x, u)) - np.log(cs.psi_u(x0, u0))
                    + np.log(u0 / u) + np.log(np.maximum(dv0_dv, 1e-300)))
    dxi = np.expm1(log_one_plus)
    eta = np.exp(-log_u)
    return XiState(ys=y, xi=xi, dxi=dxi, t=s, eta=min(eta, 1.0))
