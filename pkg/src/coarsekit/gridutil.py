"""Shared numerical helpers: composite Gauss panels, graded grids, CSV emission."""

import os

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigError


def gauss_panels(edges, order=8):
    """Composite Gauss-Legendre rule on the panels defined by ``edges``.

    Returns flat (nodes, weights) arrays covering [edges[0], edges[-1]].
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be strictly increasing with >= 2 entries")
    gx, gw = leggauss(order)
    a = edges[:-1][:, None]
    b = edges[1:][:, None]
    nodes = 0.5 * (b - a) * gx[None, :] + 0.5 * (a + b)
    weights = 0.5 * (b - a) * gw[None, :]
    return nodes.ravel(), weights.ravel()


def panel_cumulative(fun, edges, order=8):
    """Cumulative integral of ``fun`` at the panel edges, starting at 0.

    ``fun`` must accept an ndarray.  Returns an array of len(edges) values
    F(edges[k]) = int_{edges[0]}^{edges[k]} fun.
    """
    edges = np.asarray(edges, dtype=float)
    gx, gw = leggauss(order)
    a = edges[:-1][:, None]
    b = edges[1:][:, None]
    nodes = 0.5 * (b - a) * gx[None, :] + 0.5 * (a + b)
    weights = 0.5 * (b - a) * gw[None, :]
    vals = fun(nodes.ravel()).reshape(nodes.shape)
    per_panel = np.sum(vals * weights, axis=1)
    out = np.empty(edges.size)
    out[0] = 0.0
    np.cumsum(per_panel, out=out[1:])
    return out


def geometric_edges(lo, hi, per_decade=8):
    """Logarithmically spaced edge set on [lo, hi], lo > 0."""
    n = max(2, int(np.ceil(np.log10(hi / lo) * per_decade)) + 1)
    return np.geomspace(lo, hi, n)


def endpoint_graded_edges(u_min=1e-9, n_left=48, n_mid=32, n_right=64):
    """Panel edges on (0,1) graded geometrically toward both endpoints.

    The right-end grading is in u = 1-x down to ``u_min``; the left end is
    graded in x down to ``u_min`` as well.  Used for integrands with
    integrable endpoint behaviour (x^(a-1) left, (1-x)^p right).
    """
    left = np.geomspace(u_min, 0.2, n_left)
    mid = np.linspace(0.2, 0.8, n_mid + 1)[1:-1]
    right = 1.0 - np.geomspace(u_min, 0.2, n_right)[::-1]
    return np.concatenate(([0.0], left, mid, right, [1.0 - u_min]))


def graded_01_grid(n_left=500, v_max=18.42, dv=0.02, x_break=0.9):
    """Sample grid on [0,1): linear on [0, x_break], log-graded toward 1.

    The graded part is uniform in v = -log(1-x) which resolves power-law
    tails; v_max=18.42 reaches 1-x ~ 1e-8.
    """
    v_break = -np.log1p(-x_break)
    left = np.linspace(0.0, x_break, n_left, endpoint=False)
    v = np.arange(v_break, v_max, dv)
    right = -np.expm1(-v)
    return np.unique(np.concatenate((left, right)))


def trapezoid_tail_mass(x, y, support=1.0):
    """Integral of a sampled decreasing function plus a power-law tail.

    Integrates y over the sample range by the trapezoid rule and closes the
    gap [x[-1], support] assuming y ~ (support - x)^p with p fitted from the
    last two positive samples.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    core = np.trapezoid(y, x)
    return core + power_tail_integral(x, y, support)


def power_tail_integral(x, y, support=1.0):
    """Closing integral of a power-law tail beyond the last sample."""
    u_last = support - x[-1]
    if u_last <= 0 or y[-1] <= 0:
        return 0.0
    p = local_tail_exponent(x, y, support)
    return y[-1] * u_last / (p + 1.0)


def local_tail_exponent(x, y, support=1.0, fallback=1.0):
    """Exponent p of y ~ (support-x)^p fitted from the last two positive samples."""
    pos = np.nonzero(y > 0)[0]
    if pos.size < 2:
        return fallback
    i, j = pos[-2], pos[-1]
    ui, uj = support - x[i], support - x[j]
    if ui <= 0 or uj <= 0 or ui == uj:
        return fallback
    p = np.log(y[i] / y[j]) / np.log(ui / uj)
    if not np.isfinite(p) or p <= -0.9:
        return fallback
    return float(p)


def _parabola_interval_integrals(x, y):
    """Integral of y over each [x_i, x_{i+1}] from averaged 3-point parabolas."""
    n = x.size

    def triple_integral(i0, i1, i2, a_idx, b_idx):
        t0 = x[i0] - x[i1]
        t2 = x[i2] - x[i1]
        y0, y1, y2 = y[i0], y[i1], y[i2]
        c = ((y0 - y1) / t0 - (y2 - y1) / t2) / (t0 - t2)
        b = (y2 - y1) / t2 - c * t2
        ta = x[a_idx] - x[i1]
        tb = x[b_idx] - x[i1]
        return (y1 * (tb - ta) + 0.5 * b * (tb ** 2 - ta ** 2)
                + c * (tb ** 3 - ta ** 3) / 3.0)

    idx = np.arange(n - 1)
    left = np.clip(idx - 1, 0, n - 3)
    est1 = triple_integral(left, left + 1, left + 2, idx, idx + 1)
    right = np.clip(idx, 0, n - 3)
    est2 = triple_integral(right, right + 1, right + 2, idx, idx + 1)
    return 0.5 * (est1 + est2)


def _power_interval_integrals(u_left, u_right, y_left, y_right):
    """Exact integrals of a per-interval power law y ~ u^p (u = support - x).

    u_left > u_right > 0 and y decreasing toward the endpoint.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.log(y_left / y_right) / np.log(u_left / u_right)
    p = np.where(np.isfinite(p) & (p > -0.9), p, 0.0)
    return (y_left * u_left - y_right * u_right) / (p + 1.0)


def cumulative_right_integral(x, y, support=1.0, tail=True, u_switch=0.05):
    """F(x_k) = int_{x_k}^{support} y dx, accumulated from the right.

    Parabola-based interval rule in the bulk, exact power-law product rule
    within u_switch of the support (resolves vanishing tails at full relative
    precision), optional power-law closing of [x_N, support].
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    seg = _parabola_interval_integrals(x, y)
    u = support - x
    in_tail = (u[:-1] <= u_switch) & (y[:-1] > 0) & (y[1:] > 0) & (u[1:] > 0)
    if np.any(in_tail):
        seg = np.where(
            in_tail,
            _power_interval_integrals(u[:-1], u[1:], y[:-1], y[1:]),
            seg)
    out = np.zeros_like(x)
    out[:-1] = np.cumsum(seg[::-1])[::-1]
    if tail:
        out += power_tail_integral(x, y, support)
    return out


def worker_count(default=4):
    """Concurrency cap from COARSEKIT_THREADS (>=1); defaults to ``default``."""
    raw = os.environ.get("COARSEKIT_THREADS")
    if raw is None:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"COARSEKIT_THREADS must be an integer, got {raw!r}",
                          key="COARSEKIT_THREADS")
    return max(1, n)


def format_float(v):
    """Fixed 17-significant-digit formatting used by every artifact."""
    return f"{float(v):.17g}"


def write_csv(path, header, columns, manifest_hash=None):
    """Write columns as CSV with deterministic formatting and LF endings."""
    cols = [np.asarray(c) for c in columns]
    n = cols[0].shape[0]
    lines = []
    if manifest_hash is not None:
        lines.append(f"# manifest={manifest_hash}")
    lines.append(",".join(header))
    for i in range(n):
        lines.append(",".join(format_float(c[i]) for c in cols))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def loglog_slope(u, val):
    """Least-squares slope of log(val) vs log(u) plus a 2-sigma half width.

    Only strictly positive pairs participate.  Returns (slope, halfwidth);
    (nan, nan) when fewer than 3 usable points remain.
    """
    u = np.asarray(u, float)
    val = np.asarray(val, float)
    keep = (u > 0) & (val > 0) & np.isfinite(val)
    if keep.sum() < 3:
        return float("nan"), float("nan")
    lu = np.log(u[keep])
    lv = np.log(val[keep])
    A = np.vstack([lu, np.ones_like(lu)]).T
    coef, res, *_ = np.linalg.lstsq(A, lv, rcond=None)
    dof = max(1, lu.size - 2)
    sigma2 = (res[0] / dof) if res.size else 0.0
    cov = sigma2 * np.linalg.inv(A.T @ A)
    return float(coef[0]), float(2.0 * np.sqrt(max(cov[0, 0], 0.0)))
