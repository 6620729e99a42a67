"""Extended-real grid primitives shared by every transform.

Functions take values in R u {+inf}.  The +inf sentinel is ``math.inf``
(float64 ``np.inf`` in arrays); -inf and NaN are rejected wherever values
enter the library, so sup/inf scans can never be corrupted by silent
overflow.  A function sampled on a uniform grid is extended by +inf outside
its box.

Grids are uniform boxes in R^d with d in {1, 2}.  Node (i_1, ..., i_d) sits
at ``origin_k + i_k * step_k`` per axis, and values are stored row-major
(C order), so flat index = i_1 * count_2 + i_2 in 2-D.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, Union

import numpy as np

PINF = math.inf

__all__ = [
    "PINF",
    "ImproperFunctionError",
    "DimensionMismatchError",
    "as_extended",
    "validate_extended_array",
    "Grid",
    "GridFunction",
    "AnalyticFunction",
    "PointTuple",
    "ToleranceConfig",
    "eval_interp",
    "eval_interp_many",
    "sample_analytic",
    "is_proper",
    "make_descriptor",
    "function_dim",
    "eval_function",
    "finite_samples",
    "dump_grid_function",
    "load_grid_function",
]


class ImproperFunctionError(ValueError):
    """Raised when an operation requires at least one finite node."""


class DimensionMismatchError(ValueError):
    """Raised when points and grids disagree on the ambient dimension."""


def as_extended(x: float) -> float:
    """Validate a scalar as an extended-real value (finite or +inf)."""
    v = float(x)
    if math.isnan(v):
        raise ValueError("NaN is not an extended-real value")
    if v == -PINF:
        raise ValueError("-inf is unrepresentable; only +inf is allowed")
    return v


def validate_extended_array(values: np.ndarray) -> np.ndarray:
    """Validate an array of extended-real values (finite or +inf)."""
    arr = np.asarray(values, dtype=float)
    if np.isnan(arr).any():
        raise ValueError("NaN is not an extended-real value")
    if np.isneginf(arr).any():
        raise ValueError("-inf is unrepresentable; only +inf is allowed")
    return arr


def _as_tuple(x, d: int) -> tuple:
    if np.isscalar(x):
        return (x,) * d
    t = tuple(x)
    if len(t) != d:
        raise ValueError(f"expected {d} per-axis entries, got {len(t)}")
    return t


@dataclass(frozen=True)
class Grid:
    """Uniform box grid in R^d, d in {1, 2}.

    ``origin``, ``step`` and ``count`` are per-axis tuples; node coordinates
    are ``origin_k + i_k * step_k`` and the index <-> coordinate map is a
    bijection over ``0 <= i_k < count_k``.
    """

    origin: tuple
    step: tuple
    count: tuple

    def __post_init__(self):
        d = len(self.count)
        if d not in (1, 2):
            raise ValueError("grid dimension must be 1 or 2")
        if len(self.origin) != d or len(self.step) != d:
            raise ValueError("origin/step/count must have equal lengths")
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "step", tuple(float(s) for s in self.step))
        object.__setattr__(self, "count", tuple(int(c) for c in self.count))
        for s in self.step:
            if not (s > 0) or not math.isfinite(s):
                raise ValueError("grid step must be positive and finite")
        for c in self.count:
            if c < 2:
                raise ValueError("grid needs at least 2 nodes per axis")
        for o in self.origin:
            if not math.isfinite(o):
                raise ValueError("grid origin must be finite")

    @classmethod
    def from_bounds(cls, lo, hi, step) -> "Grid":
        """Grid covering [lo, hi] per axis with the given step.

        The upper bound is stretched to the nearest node at or past ``hi``.
        """
        lo_t = tuple(np.atleast_1d(np.asarray(lo, dtype=float)))
        hi_t = tuple(np.atleast_1d(np.asarray(hi, dtype=float)))
        d = len(lo_t)
        step_t = _as_tuple(step, d)
        count = tuple(
            int(math.ceil((h - l) / s - 1e-9)) + 1
            for l, h, s in zip(lo_t, hi_t, step_t)
        )
        return cls(lo_t, step_t, count)

    @property
    def dim(self) -> int:
        return len(self.count)

    @property
    def shape(self) -> tuple:
        return self.count

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.count))

    def axis(self, k: int) -> np.ndarray:
        return self.origin[k] + np.arange(self.count[k]) * self.step[k]

    def box(self) -> list:
        return [
            (self.origin[k], self.origin[k] + (self.count[k] - 1) * self.step[k])
            for k in range(self.dim)
        ]

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (n_nodes, d), row-major order."""
        axes = [self.axis(k) for k in range(self.dim)]
        if self.dim == 1:
            return axes[0][:, None]
        g1, g2 = np.meshgrid(axes[0], axes[1], indexing="ij")
        return np.column_stack([g1.ravel(), g2.ravel()])

    def node(self, idx) -> np.ndarray:
        idx_t = (idx,) if np.isscalar(idx) else tuple(idx)
        return np.array(
            [self.origin[k] + idx_t[k] * self.step[k] for k in range(self.dim)]
        )

    def index_of(self, point, snap_tol: float = 1e-9):
        """Multi-index of the node at ``point``; None if off-lattice."""
        p = np.atleast_1d(np.asarray(point, dtype=float))
        if p.size != self.dim:
            raise DimensionMismatchError("point dimension != grid dimension")
        idx = []
        for k in range(self.dim):
            t = (p[k] - self.origin[k]) / self.step[k]
            i = int(round(t))
            if abs(t - i) > snap_tol or not (0 <= i < self.count[k]):
                return None
            idx.append(i)
        return tuple(idx)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the closed box (rows of ``points``)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        mask = np.ones(len(pts), dtype=bool)
        for k, (lo, hi) in enumerate(self.box()):
            mask &= (pts[:, k] >= lo - 1e-12) & (pts[:, k] <= hi + 1e-12)
        return mask

    def refined(self, factor: int) -> "Grid":
        """Same box, step divided by ``factor``."""
        if factor < 1:
            raise ValueError("refinement factor must be >= 1")
        return Grid(
            self.origin,
            tuple(s / factor for s in self.step),
            tuple((c - 1) * factor + 1 for c in self.count),
        )

    def commensurate_with(self, other: "Grid", tol: float = 1e-9) -> bool:
        """Same steps with the origin offset an integer number of steps."""
        if self.dim != other.dim:
            return False
        for k in range(self.dim):
            if abs(self.step[k] - other.step[k]) > tol * self.step[k]:
                return False
            t = (self.origin[k] - other.origin[k]) / other.step[k]
            if abs(t - round(t)) > tol:
                return False
        return True


@dataclass
class GridFunction:
    """Extended-real function sampled on a uniform grid.

    ``values`` has shape ``grid.shape``; entries are finite or +inf.  The
    function is proper iff at least one node is finite.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        arr = validate_extended_array(self.values)
        if arr.shape != self.grid.shape:
            arr = arr.reshape(self.grid.shape)
        self.values = arr

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.values)

    @property
    def proper(self) -> bool:
        return bool(self.finite_mask.any())

    def finite_points(self):
        """Coordinates and values of the finite nodes: ((m, d), (m,))."""
        mask = self.finite_mask.ravel()
        pts = self.grid.nodes()[mask]
        vals = self.values.ravel()[mask]
        return pts, vals

    def shifted(self, offset: float) -> "GridFunction":
        return GridFunction(self.grid, self.values + float(offset))


def is_proper(f: GridFunction) -> bool:
    """True iff some node value is finite."""
    return f.proper


@dataclass(frozen=True)
class AnalyticFunction:
    """Closed-form function evaluated lazily at caller resolution.

    ``fn`` maps an (m, d) array of points to (m,) extended-real values.
    ``cloud`` (optional) samples the effective domain of a bounded-support
    function as (points, values); conjugation-type sups over such functions
    enumerate the cloud instead of a grid.
    """

    name: str
    dim: int
    fn: Callable[[np.ndarray], np.ndarray]
    cloud: Callable[[int], tuple] | None = None
    params: dict = field(default_factory=dict)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"{self.name}: expected dimension {self.dim}, got {pts.shape[1]}"
            )
        return validate_extended_array(self.fn(pts))


FunctionLike = Union[GridFunction, AnalyticFunction]


@dataclass(frozen=True)
class PointTuple:
    """One element x = (x_1, ..., x_N) of (R^d)^N."""

    points: np.ndarray  # (N, d)

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.points, dtype=float))
        if arr.ndim != 2 or arr.shape[0] < 2:
            raise ValueError("a point tuple needs N >= 2 points")
        if not np.isfinite(arr).all():
            raise ValueError("tuple coordinates must be finite")
        object.__setattr__(self, "points", arr)

    @property
    def n_marginals(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def coordinate_sum(self) -> np.ndarray:
        return self.points.sum(axis=0)


@dataclass(frozen=True)
class ToleranceConfig:
    """Numerical slacks shared by the verification batteries."""

    eps_equal: float = 1e-6
    eps_contact: float = 1e-6
    divergence_cap: float = 1e6

    def __post_init__(self):
        for name in ("eps_equal", "eps_contact", "divergence_cap"):
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be strictly positive")


# ---------------------------------------------------------------------------
# interpolation


def eval_interp_many(f: GridFunction, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of ``f`` at arbitrary points.

    Returns +inf outside the box or whenever a stencil node is +inf.  Points
    within 1e-9 steps of a node snap to it, so node values are reproduced
    exactly and an infinite neighbour never contaminates an on-node query.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != f.dim:
        raise DimensionMismatchError("point dimension != grid dimension")
    g = f.grid
    m = len(pts)
    out = np.full(m, PINF)
    inside = g.contains(pts)
    if not inside.any():
        return out
    p = pts[inside]

    base = np.empty((len(p), g.dim), dtype=int)
    frac = np.empty((len(p), g.dim))
    for k in range(g.dim):
        t = (p[:, k] - g.origin[k]) / g.step[k]
        near = np.rint(t)
        snap = np.abs(t - near) <= 1e-9
        t = np.where(snap, near, t)
        i = np.floor(t).astype(int)
        i = np.clip(i, 0, g.count[k] - 2)
        w = t - i
        # exact node hit: collapse the stencil to that node
        hit_hi = snap & (near - i == 1)
        w = np.where(snap, np.where(hit_hi, 1.0, 0.0), w)
        base[:, k] = i
        frac[:, k] = w

    vals = f.values
    if g.dim == 1:
        i = base[:, 0]
        w = frac[:, 0]
        v0 = vals[i]
        v1 = vals[i + 1]
        res = np.where(w == 0.0, v0, np.where(w == 1.0, v1, (1 - w) * v0 + w * v1))
        bad = (np.isinf(v0) & (w < 1.0)) | (np.isinf(v1) & (w > 0.0))
        res = np.where(bad, PINF, res)
    else:
        i1, i2 = base[:, 0], base[:, 1]
        w1, w2 = frac[:, 0], frac[:, 1]
        corners = [
            (vals[i1, i2], (1 - w1) * (1 - w2)),
            (vals[i1 + 1, i2], w1 * (1 - w2)),
            (vals[i1, i2 + 1], (1 - w1) * w2),
            (vals[i1 + 1, i2 + 1], w1 * w2),
        ]
        res = np.zeros(len(p))
        bad = np.zeros(len(p), dtype=bool)
        for v, w in corners:
            active = w > 0.0
            bad |= np.isinf(v) & active
            res += np.where(active, np.where(np.isinf(v), 0.0, v) * w, 0.0)
        res = np.where(bad, PINF, res)
    out[inside] = res
    return out


def eval_interp(f: GridFunction, x) -> float:
    """Scalar version of :func:`eval_interp_many`."""
    return float(eval_interp_many(f, np.atleast_2d(np.asarray(x, dtype=float)))[0])


# ---------------------------------------------------------------------------
# analytic descriptor registry


def _quadratic(pts):
    return 0.5 * np.sum(pts * pts, axis=1)


def _segment_cloud(lam: float, direction: np.ndarray, n: int):
    a = np.linspace(-lam, lam, max(int(n), 3))
    pts = a[:, None] * direction[None, :]
    return pts, np.zeros(len(a))


def make_descriptor(name: str, **params) -> AnalyticFunction:
    """Build a named analytic function.

    Known families: ``quadratic`` (q = |x|^2/2), ``scaled_quadratic`` (a*q),
    ``abs``, ``point_indicator``, ``segment_indicator`` (0 on a centred
    segment lam*[-1,1]*direction, +inf off it), ``maxnorm_plus_q``.
    """
    if name == "quadratic":
        dim = int(params.get("dim", 1))
        return AnalyticFunction("quadratic", dim, _quadratic)
    if name == "scaled_quadratic":
        a = float(params["a"])
        dim = int(params.get("dim", 1))
        return AnalyticFunction(
            f"{a:g}*quadratic", dim, lambda p: a * _quadratic(p), params={"a": a}
        )
    if name == "abs":
        return AnalyticFunction("abs", 1, lambda p: np.abs(p[:, 0]))
    if name == "point_indicator":
        at = np.atleast_1d(np.asarray(params.get("at", 0.0), dtype=float))
        dim = len(at)

        def _point_ind(p, at=at):
            hit = np.all(np.abs(p - at[None, :]) <= 1e-12, axis=1)
            return np.where(hit, 0.0, PINF)

        return AnalyticFunction(
            "point_indicator",
            dim,
            _point_ind,
            cloud=lambda n, at=at: (at[None, :].copy(), np.zeros(1)),
            params={"at": tuple(at)},
        )
    if name == "segment_indicator":
        lam = float(params["lam"])
        direction = np.asarray(params.get("direction", (1.0,)), dtype=float)
        direction = np.atleast_1d(direction)
        if lam <= 0:
            raise ValueError("segment_indicator needs lam > 0")
        nrm = float(np.linalg.norm(direction))
        if not nrm > 0:
            raise ValueError("segment direction must be nonzero")
        u = direction / nrm
        dim = len(u)

        def _seg(p, lam=lam, u=u):
            a = p @ u
            on_line = np.linalg.norm(p - a[:, None] * u[None, :], axis=1) <= 1e-9
            return np.where(on_line & (np.abs(a) <= lam + 1e-12), 0.0, PINF)

        return AnalyticFunction(
            "segment_indicator",
            dim,
            _seg,
            cloud=lambda n, lam=lam, u=u: _segment_cloud(lam, u, n),
            params={"lam": lam, "direction": tuple(u)},
        )
    if name == "maxnorm_plus_q":
        return AnalyticFunction(
            "maxnorm_plus_q",
            2,
            lambda p: np.max(np.abs(p), axis=1) + _quadratic(p),
        )
    raise ValueError(f"unknown analytic descriptor: {name!r}")


def sample_analytic(desc, grid: Grid) -> GridFunction:
    """Evaluate an analytic descriptor exactly at every grid node."""
    if isinstance(desc, str):
        desc = make_descriptor(desc)
    if desc.dim != grid.dim:
        raise DimensionMismatchError(
            f"{desc.name} has dimension {desc.dim}, grid has {grid.dim}"
        )
    vals = desc(grid.nodes()).reshape(grid.shape)
    return GridFunction(grid, vals)


def function_dim(f: FunctionLike) -> int:
    return f.dim if isinstance(f, AnalyticFunction) else f.grid.dim


def eval_function(f: FunctionLike, points: np.ndarray) -> np.ndarray:
    """Evaluate a grid or analytic function at the rows of ``points``."""
    if isinstance(f, AnalyticFunction):
        return f(points)
    return eval_interp_many(f, points)


def finite_samples(f: FunctionLike, grid: Grid | None = None, cloud_size: int = 201):
    """Finite-domain samples of a function for sup/inf enumeration.

    Grid functions contribute their finite nodes; bounded-support analytic
    functions contribute their cloud; other analytic functions are sampled
    on ``grid`` (required).
    """
    if isinstance(f, GridFunction):
        return f.finite_points()
    if f.cloud is not None:
        pts, vals = f.cloud(cloud_size)
        return np.atleast_2d(np.asarray(pts, dtype=float)), np.asarray(vals, dtype=float)
    if grid is None:
        raise ValueError(f"{f.name}: full-support analytic function needs a grid")
    return sample_analytic(f, grid).finite_points()


# ---------------------------------------------------------------------------
# grid dump format


def _fmt_axis(values: Iterable) -> str:
    return ",".join(f"{v:.17g}" for v in values)


def dump_grid_function(f: GridFunction, path) -> None:
    """Write the text dump: header line then node values row-major.

    Finite values print with 17 significant digits (bit-exact round trip);
    +inf prints as the token ``inf``.
    """
    g = f.grid
    header = (
        f"d={g.dim};count={','.join(str(c) for c in g.count)};"
        f"origin={_fmt_axis(g.origin)};step={_fmt_axis(g.step)}"
    )
    lines = [header]
    for v in f.values.ravel():
        lines.append("inf" if np.isinf(v) else f"{v:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_grid_function(path) -> GridFunction:
    """Read a grid dump written by :func:`dump_grid_function`."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    head = dict(part.split("=", 1) for part in lines[0].split(";"))
    d = int(head["d"])
    count = tuple(int(c) for c in head["count"].split(","))
    origin = tuple(float(o) for o in head["origin"].split(","))
    step = tuple(float(s) for s in head["step"].split(","))
    if len(count) != d:
        raise ValueError("grid dump header is inconsistent")
    grid = Grid(origin, step, count)
    vals = np.array(
        [PINF if tok == "inf" else float(tok) for tok in lines[1:]], dtype=float
    )
    if vals.size != grid.n_nodes:
        raise ValueError("grid dump has wrong number of value lines")
    return GridFunction(grid, vals.reshape(grid.shape))
