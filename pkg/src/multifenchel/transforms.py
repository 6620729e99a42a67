"""Discrete Fenchel conjugation, Moreau envelopes, proximal maps.

Discrete semantics: every transform treats a grid function as the
node-restricted function (+inf off nodes), so the conjugate of ``f`` at a
dual node ``y`` is the exact maximum of ``<x, y> - f(x)`` over the finite
nodes.  This is exact for piecewise-linear convex functions whose
breakpoints lie on nodes and gives a clean brute-force oracle for the fast
kernels:

* conjugation: lower-hull merge (linear-time Legendre transform) against a
  full scan;
* Moreau envelope: lower envelope of equal-curvature parabolas against a
  windowed scan.

Sups near the box edge are truncated; identity batteries therefore compare
only on a trusted interior derived from slope bounds or winner locations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    PINF,
    DimensionMismatchError,
    Grid,
    GridFunction,
    ImproperFunctionError,
    eval_interp_many,
    make_descriptor,
    sample_analytic,
)
from .report import Report, fmt_point

__all__ = [
    "ConjugateRequest",
    "conjugate",
    "conjugate_with_info",
    "conjugate_cloud",
    "biconjugate",
    "inf_convolution",
    "moreau_envelope",
    "prox",
    "prox_many",
    "check_strong_convexity",
    "nested_sup_identity_check",
    "slope_bound",
    "trusted_interior_mask",
]

_CHUNK = 1 << 21  # elements per brute chunk


@dataclass(frozen=True)
class ConjugateRequest:
    input: GridFunction
    dual_grid: Grid
    method: str = "fast"

    def __post_init__(self):
        if self.dual_grid.dim != self.input.grid.dim:
            raise DimensionMismatchError("dual grid dimension != input dimension")
        if self.method not in ("fast", "brute"):
            raise ValueError("method must be 'fast' or 'brute'")


# ---------------------------------------------------------------------------
# 1-D kernels


def _conj_line_brute(xs, vals, ys):
    """max_i xs[i]*y - vals[i] per y; returns (values, winner index)."""
    fin = np.flatnonzero(np.isfinite(vals))
    if fin.size == 0:
        return np.full(len(ys), -PINF), np.full(len(ys), -1, dtype=int)
    x = xs[fin]
    v = vals[fin]
    out = np.empty(len(ys))
    win = np.empty(len(ys), dtype=int)
    step = max(1, _CHUNK // max(1, len(fin)))
    for lo in range(0, len(ys), step):
        hi = min(lo + step, len(ys))
        block = ys[lo:hi, None] * x[None, :] - v[None, :]
        k = block.argmax(axis=1)
        out[lo:hi] = block[np.arange(hi - lo), k]
        win[lo:hi] = fin[k]
    return out, win


def _lower_hull(x, v):
    """Indices of the lower convex hull of (x, v), x strictly ascending.

    Points exactly on a hull edge are kept (conservative: a kept point never
    changes the conjugate, a wrongly dropped one could).
    """
    hull = []
    for j in range(len(x)):
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            # drop i1 iff it lies strictly above the chord i0 -> j
            if (v[i1] - v[i0]) * (x[j] - x[i0]) > (v[j] - v[i0]) * (x[i1] - x[i0]):
                hull.pop()
            else:
                break
        hull.append(j)
    return hull


def _conj_line_fast(xs, vals, ys):
    """Linear-time discrete Legendre transform of one line.

    Same value contract as :func:`_conj_line_brute`; ys must be ascending.
    """
    fin = np.flatnonzero(np.isfinite(vals))
    if fin.size == 0:
        return np.full(len(ys), -PINF), np.full(len(ys), -1, dtype=int)
    x = xs[fin]
    v = vals[fin]
    hull = _lower_hull(x, v)
    hx = x[hull]
    hv = v[hull]
    m = len(hull)
    out = np.empty(len(ys))
    win = np.empty(len(ys), dtype=int)
    p = 0
    for j, y in enumerate(ys):
        while p + 1 < m and hx[p + 1] * y - hv[p + 1] >= hx[p] * y - hv[p]:
            p += 1
        out[j] = hx[p] * y - hv[p]
        win[j] = fin[hull[p]]
    return out, win


def _parab_env_line(ys, vals, xs):
    """Lower envelope of parabolas v_j + (x - y_j)^2 / 2 swept over xs.

    ys ascending, xs ascending.  Returns (values, winner index); winner -1
    and value +inf when no finite parabola exists.
    """
    fin = np.flatnonzero(np.isfinite(vals))
    if fin.size == 0:
        return np.full(len(xs), PINF), np.full(len(xs), -1, dtype=int)
    y = ys[fin]
    v = vals[fin]
    m = len(y)
    keep = [0]
    bound = [-PINF]

    def crossing(j, k):
        # abscissa where parabola j takes over from k (y[k] < y[j])
        return ((v[j] + 0.5 * y[j] * y[j]) - (v[k] + 0.5 * y[k] * y[k])) / (y[j] - y[k])

    for j in range(1, m):
        s = crossing(j, keep[-1])
        while len(keep) > 1 and s <= bound[-1]:
            keep.pop()
            bound.pop()
            s = crossing(j, keep[-1])
        keep.append(j)
        bound.append(s)

    out = np.empty(len(xs))
    win = np.empty(len(xs), dtype=int)
    p = 0
    last = len(keep) - 1
    for i, xx in enumerate(xs):
        while p < last and bound[p + 1] < xx:
            p += 1
        k = keep[p]
        dx = xx - y[k]
        out[i] = v[k] + 0.5 * dx * dx
        win[i] = fin[k]
    return out, win


# ---------------------------------------------------------------------------
# conjugation


def _conjugate_1d(f: GridFunction, dual: Grid, fast: bool):
    xs = f.grid.axis(0)
    ys = dual.axis(0)
    kern = _conj_line_fast if fast else _conj_line_brute
    vals, win = kern(xs, f.values, ys)
    fin = np.flatnonzero(np.isfinite(f.values))
    lo, hi = fin[0], fin[-1]
    edge = (win == lo) | (win == hi)
    return GridFunction(dual, vals), edge


def _conjugate_2d(f: GridFunction, dual: Grid, fast: bool):
    kern = _conj_line_fast if fast else _conj_line_brute
    n1, n2 = f.grid.shape
    m1, m2 = dual.shape
    x1 = f.grid.axis(0)
    x2 = f.grid.axis(1)
    y1 = dual.axis(0)
    y2 = dual.axis(1)

    # inner pass: for each x1 line, conjugate along axis 2
    inner = np.empty((n1, m2))
    inner_edge = np.zeros((n1, m2), dtype=bool)
    fin_rows = np.isfinite(f.values)
    col_lo = np.full(n1, -1)
    col_hi = np.full(n1, -1)
    for i1 in range(n1):
        vals, win = kern(x2, f.values[i1], y2)
        inner[i1] = vals
        fr = np.flatnonzero(fin_rows[i1])
        if fr.size:
            col_lo[i1], col_hi[i1] = fr[0], fr[-1]
            inner_edge[i1] = (win == fr[0]) | (win == fr[-1])
        # rows with no finite node keep -inf values and are excluded below

    # outer pass: for each y2 column, conjugate -inner along axis 1
    out = np.empty((m1, m2))
    edge = np.zeros((m1, m2), dtype=bool)
    row_fin = np.flatnonzero(col_lo >= 0)
    r_lo, r_hi = row_fin[0], row_fin[-1]
    for j2 in range(m2):
        g = np.where(np.isfinite(inner[:, j2]), -inner[:, j2], PINF)
        vals, win = kern(x1, g, y1)
        out[:, j2] = vals
        edge[:, j2] = (win == r_lo) | (win == r_hi) | inner_edge[win, j2]
    return GridFunction(dual, out), edge


def conjugate_with_info(f: GridFunction, dual_grid: Grid, method: str = "fast"):
    """Conjugate plus a boolean mask of dual nodes whose sup is box-limited.

    A marked node attained its maximum at an extreme finite node of the
    input, so the value would change if the sampled box grew: treat it as
    untrusted when comparing against continuum identities.
    """
    req = ConjugateRequest(f, dual_grid, method)
    if not f.proper:
        raise ImproperFunctionError("conjugate of an improper function")
    if f.dim == 1:
        return _conjugate_1d(f, req.dual_grid, method == "fast")
    return _conjugate_2d(f, req.dual_grid, method == "fast")


def conjugate(req_or_f, dual_grid: Grid | None = None, method: str = "fast") -> GridFunction:
    """Discrete Fenchel conjugate: max over input nodes of <x,y> - f(x)."""
    if isinstance(req_or_f, ConjugateRequest):
        f, dual_grid, method = req_or_f.input, req_or_f.dual_grid, req_or_f.method
    else:
        f = req_or_f
        if dual_grid is None:
            raise ValueError("dual_grid is required")
    out, _ = conjugate_with_info(f, dual_grid, method)
    return out


def conjugate_cloud(points, values, dual_grid: Grid) -> GridFunction:
    """Conjugate of a finite point cloud: max over rows of <p,y> - v.

    Exact for bounded-support functions whose domain the cloud enumerates
    (sups attain on the cloud, no box truncation).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vals = np.asarray(values, dtype=float)
    fin = np.isfinite(vals)
    if not fin.any():
        raise ImproperFunctionError("conjugate of an improper cloud")
    pts = pts[fin]
    vals = vals[fin]
    if pts.shape[1] != dual_grid.dim:
        raise DimensionMismatchError("cloud dimension != dual grid dimension")
    ys = dual_grid.nodes()
    out = np.empty(len(ys))
    step = max(1, _CHUNK // max(1, len(pts)))
    for lo in range(0, len(ys), step):
        hi = min(lo + step, len(ys))
        out[lo:hi] = (ys[lo:hi] @ pts.T - vals[None, :]).max(axis=1)
    return GridFunction(dual_grid, out.reshape(dual_grid.shape))


def biconjugate(f: GridFunction, intermediate_grid: Grid) -> GridFunction:
    """f** on f's own grid via two conjugations through ``intermediate_grid``.

    Node-wise f** <= f; equality (up to the dual-grid slope quantisation)
    exactly where f touches its lower convex envelope.
    """
    star = conjugate(f, intermediate_grid, "fast")
    return conjugate(star, f.grid, "fast")


# ---------------------------------------------------------------------------
# infimal convolution and the Moreau envelope


def inf_convolution(f: GridFunction, g: GridFunction, out_grid: Grid) -> GridFunction:
    """(f box g)(x) = min over f-nodes y of f(y) + g(x - y).

    ``g`` is interpolated and extended by +inf outside its box; nodes with
    no admissible y return +inf.  Full scan: cost O(#out * #finite(f)).
    """
    if f.dim != g.dim or f.dim != out_grid.dim:
        raise DimensionMismatchError("inf_convolution dimension mismatch")
    ypts, yvals = f.finite_points()
    if len(ypts) == 0:
        raise ImproperFunctionError("inf_convolution with improper left factor")
    xs = out_grid.nodes()
    out = np.empty(len(xs))
    step = max(1, _CHUNK // max(1, len(ypts)))
    for lo in range(0, len(xs), step):
        hi = min(lo + step, len(xs))
        diff = xs[lo:hi, None, :] - ypts[None, :, :]
        gv = eval_interp_many(g, diff.reshape(-1, f.dim)).reshape(hi - lo, len(ypts))
        out[lo:hi] = (gv + yvals[None, :]).min(axis=1)
    return GridFunction(out_grid, out.reshape(out_grid.shape))


def _axis_window(fgrid: Grid, k: int):
    lo, hi = fgrid.box()[k]
    return lo, hi


def _env_line_windowed(ys, vals, xs, wlo, whi):
    """Parabola envelope restricted to x - y in [wlo, whi].

    Fast sweep first; outputs whose winner violates the window are redone by
    a windowed scan (matches the interpolated-q brute semantics on
    commensurate grids).
    """
    out, win = _parab_env_line(ys, vals, xs)
    ok = win >= 0
    dx = np.where(ok, xs - np.where(ok, ys[np.maximum(win, 0)], 0.0), 0.0)
    bad = ok & ((dx < wlo - 1e-12) | (dx > whi + 1e-12))
    if bad.any():
        fin = np.isfinite(vals)
        for i in np.flatnonzero(bad):
            x = xs[i]
            sel = fin & (x - ys >= wlo - 1e-12) & (x - ys <= whi + 1e-12)
            if not sel.any():
                out[i] = PINF
                win[i] = -1
                continue
            cand = vals[sel] + 0.5 * (x - ys[sel]) ** 2
            j = int(np.argmin(cand))
            out[i] = cand[j]
            win[i] = np.flatnonzero(sel)[j]
    return out, win


def moreau_envelope(f: GridFunction, out_grid: Grid | None = None) -> GridFunction:
    """Moreau envelope e_f = f box q with q sampled on f's grid.

    On grids commensurate with f's (the usual case) the parabola-envelope
    sweep reproduces the interpolated-q infimal convolution exactly; other
    layouts fall back to :func:`inf_convolution`.
    """
    if not f.proper:
        raise ImproperFunctionError("Moreau envelope of an improper function")
    out_grid = out_grid or f.grid
    if not out_grid.commensurate_with(f.grid):
        qd = make_descriptor("quadratic", dim=f.dim)
        return inf_convolution(f, sample_analytic(qd, f.grid), out_grid)

    if f.dim == 1:
        wlo, whi = _axis_window(f.grid, 0)
        vals, _ = _env_line_windowed(f.grid.axis(0), f.values, out_grid.axis(0), wlo, whi)
        return GridFunction(out_grid, vals)

    # separable 2-D: envelope along axis 2 then axis 1
    n1 = f.grid.count[0]
    m1, m2 = out_grid.count
    w2 = _axis_window(f.grid, 1)
    w1 = _axis_window(f.grid, 0)
    y2 = f.grid.axis(1)
    x2 = out_grid.axis(1)
    mid = np.empty((n1, m2))
    for i1 in range(n1):
        mid[i1], _ = _env_line_windowed(y2, f.values[i1], x2, *w2)
    y1 = f.grid.axis(0)
    x1 = out_grid.axis(0)
    out = np.empty((m1, m2))
    for j2 in range(m2):
        out[:, j2], _ = _env_line_windowed(y1, mid[:, j2], x1, *w1)
    return GridFunction(out_grid, out)


# ---------------------------------------------------------------------------
# proximal map


def prox_many(f: GridFunction, xs: np.ndarray) -> np.ndarray:
    """Grid node minimising f(y) + |y - x|^2/2 per row of ``xs``.

    Ties break to the smallest row-major index.
    """
    if not f.proper:
        raise ImproperFunctionError("prox of an improper function")
    pts = np.atleast_2d(np.asarray(xs, dtype=float))
    if pts.shape[1] != f.dim:
        raise DimensionMismatchError("prox point dimension != grid dimension")
    nodes = f.grid.nodes()
    vals = f.values.ravel()
    out = np.empty_like(pts)
    step = max(1, _CHUNK // max(1, len(nodes)))
    for lo in range(0, len(pts), step):
        hi = min(lo + step, len(pts))
        d = pts[lo:hi, None, :] - nodes[None, :, :]
        obj = vals[None, :] + 0.5 * np.sum(d * d, axis=2)
        out[lo:hi] = nodes[obj.argmin(axis=1)]
    return out


def prox(f: GridFunction, x) -> np.ndarray:
    """Single-point version of :func:`prox_many`."""
    return prox_many(f, np.atleast_2d(np.asarray(x, dtype=float)))[0]


# ---------------------------------------------------------------------------
# convexity / strong convexity


_DIRECTIONS_2D = ((1, 0), (0, 1), (1, 1), (1, -1))


def _second_difference_violation(g: np.ndarray, shift, tol: float):
    """First node (row-major) violating convexity along ``shift``; else None.

    Violations: a finite node below the chord of its finite neighbours, or a
    +inf node strictly between finite neighbours (domain must be an
    interval along every direction).
    """
    shape = g.shape
    mid_sl, prev_sl, next_sl = [], [], []
    for k, s in enumerate(shift):
        a = abs(s)
        n = shape[k]
        if 2 * a >= n:
            return None
        mid_sl.append(slice(a, n - a))
        prev_sl.append(slice(a - s, n - a - s))
        next_sl.append(slice(a + s, n - a + s))
    prev = g[tuple(prev_sl)]
    mid = g[tuple(mid_sl)]
    nxt = g[tuple(next_sl)]
    mid_fin = np.isfinite(mid)
    nb_fin = np.isfinite(prev) & np.isfinite(nxt)
    curv = prev + nxt - 2 * np.where(mid_fin, mid, 0.0)
    viol = (mid_fin & nb_fin & (curv < -tol)) | (~mid_fin & nb_fin)
    if not viol.any():
        return None
    flat = int(np.argmax(viol.ravel()))
    idx = np.unravel_index(flat, viol.shape)
    return tuple(int(i) + abs(s) for i, s in zip(idx, shift))


def check_strong_convexity(f: GridFunction, lam: float = 0.0, tol: float = 1e-9):
    """Discrete lambda-strong convexity: f - lam*q has nonnegative second
    differences along both axes and both diagonals at every interior node.

    Returns (verdict, witness-index-or-None).
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    g = f.values.copy()
    if lam != 0.0:
        nodes = f.grid.nodes().reshape(f.grid.shape + (f.dim,))
        q = 0.5 * np.sum(nodes * nodes, axis=-1)
        g = np.where(np.isfinite(g), g - lam * q, g)
    dirs = ((1,),) if f.dim == 1 else _DIRECTIONS_2D
    for d in dirs:
        w = _second_difference_violation(g, d, tol)
        if w is not None:
            return False, w if f.dim > 1 else (w[0],)
    return True, None


def slope_bound(f: GridFunction) -> float:
    """Max |finite difference| per step over adjacent finite node pairs."""
    best = 0.0
    v = f.values
    if f.dim == 1:
        d = np.diff(v)
        d = d[np.isfinite(d)]
        if d.size:
            best = float(np.max(np.abs(d))) / f.grid.step[0]
        return best
    for axis in (0, 1):
        d = np.diff(v, axis=axis)
        d = d[np.isfinite(d)]
        if d.size:
            best = max(best, float(np.max(np.abs(d))) / f.grid.step[axis])
    return best


def trusted_interior_mask(grid: Grid, radius) -> np.ndarray:
    """Nodes at distance >= radius (per axis) from the box boundary."""
    rad = _as_radii(radius, grid.dim)
    masks = []
    for k in range(grid.dim):
        ax = grid.axis(k)
        lo, hi = grid.box()[k]
        masks.append((ax >= lo + rad[k] - 1e-12) & (ax <= hi - rad[k] + 1e-12))
    if grid.dim == 1:
        return masks[0]
    return masks[0][:, None] & masks[1][None, :]


def _as_radii(radius, d):
    if np.isscalar(radius):
        return (float(radius),) * d
    t = tuple(float(r) for r in radius)
    if len(t) != d:
        raise ValueError("radius must be scalar or per-axis")
    return t


# ---------------------------------------------------------------------------
# nested-sup identity


def _product_cloud(fs):
    pts_list = []
    val_list = []
    for f in fs:
        p, v = f.finite_points()
        pts_list.append(p)
        val_list.append(v)
    P = pts_list[0]
    V = val_list[0]
    for p, v in zip(pts_list[1:], val_list[1:]):
        P = (P[:, None, :] + p[None, :, :]).reshape(-1, P.shape[1])
        V = (V[:, None] + v[None, :]).ravel()
    return P, V


def nested_sup_identity_check(
    g: GridFunction,
    fs,
    probe_points,
    dual_grid: Grid | None = None,
    tol: float = 5e-3,
) -> Report:
    """Compare the two evaluations of the nested-sup identity at probes.

    Left side: sup over the product of the f_i finite nodes of
    g(x + sum x_i) - sum f_i(x_i), g interpolated inside its box and the
    node excluded where g is unknown (+inf).  Right side: the conjugate of
    (g* - sum f_i*) on ``dual_grid``, which stands in for the domain of g*.
    A side whose winner sits on the sampled boundary is flagged divergent;
    deviations are compared only where neither side is flagged.
    """
    for f in fs:
        if not f.proper:
            raise ImproperFunctionError("identity check needs proper f_i")
        ok, w = check_strong_convexity(f, 0.0)
        if not ok:
            raise ValueError(f"f_i not convex at node {w}")
    if not g.proper:
        raise ImproperFunctionError("identity check needs proper g")

    if dual_grid is None:
        r = slope_bound(g) + 1.0
        dual_grid = Grid.from_bounds(
            (-r,) * g.dim, (r,) * g.dim, min(g.grid.step) / 2
        )

    probes = np.atleast_2d(np.asarray(probe_points, dtype=float))
    P, V = _product_cloud(fs)

    gstar, gs_edge = conjugate_with_info(g, dual_grid, "fast")
    phi = gstar.values.copy()
    for f in fs:
        fstar = conjugate(f, dual_grid, "fast")
        phi = phi - fstar.values
    dual_nodes = dual_grid.nodes()
    phi_flat = phi.ravel()

    rep = Report(
        "nested_sup_identity",
        context={"n_marginals_inner": len(fs), "probes": len(probes)},
    )
    worst = 0.0
    for x in probes:
        shifted = x[None, :] + P
        gv = eval_interp_many(g, shifted)
        terms = gv - V
        finite = np.isfinite(terms)
        if not finite.any():
            lhs, lhs_div = None, True
        else:
            k = int(np.argmax(np.where(finite, terms, -PINF)))
            lhs = float(terms[k])
            # winner pressed against g's sampled box => sup is box-limited
            lhs_div = False
            for ax, (lo, hi) in enumerate(g.grid.box()):
                s = g.grid.step[ax]
                if shifted[k, ax] < lo + 1.5 * s or shifted[k, ax] > hi - 1.5 * s:
                    lhs_div = True

        rhs_terms = dual_nodes @ x - phi_flat
        k2 = int(np.argmax(rhs_terms))
        rhs = float(rhs_terms[k2])
        rhs_div = bool(gs_edge.ravel()[k2]) or _on_grid_edge(dual_grid, k2)

        if lhs_div or rhs_div:
            rep.add(
                f"probe[{fmt_point(x)}]",
                lhs_div == rhs_div,
                witness=f"divergent(lhs={lhs_div},rhs={rhs_div})",
            )
            continue
        dev = abs(lhs - rhs)
        worst = max(worst, dev)
        rep.add(f"probe[{fmt_point(x)}]", dev <= tol, dev, tol)
    rep.context["max_deviation"] = fmt_point([worst])
    return rep


def _on_grid_edge(grid: Grid, flat_idx: int) -> bool:
    idx = np.unravel_index(flat_idx, grid.shape)
    return any(i == 0 or i == c - 1 for i, c in zip(idx, grid.count))
