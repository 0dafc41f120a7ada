"""Structured cell-centred grids, tensor fields and second-order difference operators.

Values live at cell centres.  Every operator is built from one primitive: a
centred difference along one axis of an array padded with two ghost layers.
When no boundary data is supplied the ghosts come from quadratic
extrapolation, which makes the centred difference at the first and last cell
identical to the usual three-point one-sided stencil.

Tensor components are stored as leading array axes, contravariant indices
first, followed by the grid axes.  The metric is Euclidean, so raising or
lowering an index leaves the components unchanged.
"""

from dataclasses import dataclass
from itertools import product
import os
import tempfile

import numpy as np

NGHOST = 2

# side name -> (axis, sign of the outward normal along that axis)
SIDES = {"left": (0, -1), "right": (0, 1), "bottom": (1, -1), "top": (1, 1)}


class GridError(ValueError):
    """Raised for malformed grids or mismatched fields."""


@dataclass(frozen=True)
class Patch:
    """A contiguous run of boundary faces on one side of the box."""

    name: str
    side: str
    start: int
    stop: int

    @property
    def axis(self):
        return SIDES[self.side][0]

    @property
    def sign(self):
        return SIDES[self.side][1]

    @property
    def nfaces(self):
        return self.stop - self.start


class Grid:
    """Uniform 1D or 2D box of cells with named boundary patches."""

    def __init__(self, dim, extents, cells, patches):
        self.dim = dim
        self.extents = tuple((float(a), float(b)) for a, b in extents)
        self.cells = tuple(int(n) for n in cells)
        self.spacing = tuple((b - a) / n for (a, b), n in zip(self.extents, self.cells))
        self.shape = self.cells
        self.patches = dict(patches)

    def __repr__(self):
        return f"Grid(dim={self.dim}, extents={self.extents}, cells={self.cells})"

    def __eq__(self, other):
        return (
            isinstance(other, Grid)
            and self.dim == other.dim
            and self.extents == other.extents
            and self.cells == other.cells
        )

    def __hash__(self):
        return hash((self.dim, self.extents, self.cells))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def sides(self):
        return [s for s, (ax, _) in SIDES.items() if ax < self.dim]

    def centers(self, axis, ghosts=0):
        a, _ = self.extents[axis]
        h = self.spacing[axis]
        idx = np.arange(-ghosts, self.cells[axis] + ghosts)
        return a + (idx + 0.5) * h

    def mesh(self, pad_axis=None):
        """Cell-centre coordinates, optionally including the ghost layers along one axis."""
        axes = [
            self.centers(ax, NGHOST if ax == pad_axis else 0) for ax in range(self.dim)
        ]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def face_coords(self, side):
        """Coordinates of the face centres on one side, ordered along the side."""
        axis, sign = SIDES[side]
        a, b = self.extents[axis]
        wall = b if sign > 0 else a
        if self.dim == 1:
            return (np.array([wall]),)
        other = 1 - axis
        along = self.centers(other)
        coords = [None, None]
        coords[axis] = np.full_like(along, wall)
        coords[other] = along
        return tuple(coords)

    def face_area(self, side):
        axis, _ = SIDES[side]
        if self.dim == 1:
            return 1.0
        return self.spacing[1 - axis]

    def nfaces(self, side):
        axis, _ = SIDES[side]
        return 1 if self.dim == 1 else self.cells[1 - axis]

    def normal(self, side):
        axis, sign = SIDES[side]
        n = np.zeros(self.dim)
        n[axis] = sign
        return n

    def patches_on(self, side):
        return sorted(
            (p for p in self.patches.values() if p.side == side), key=lambda p: p.start
        )


def make_grid(dim, extents, cells, patch_labels=None):
    """Build a uniform grid.

    Parameters
    ----------
    dim : int
        1 or 2.
    extents : sequence of (a, b)
        Interval per axis.
    cells : sequence of int
        Cell count per axis, at least 4 each.
    patch_labels : dict, optional
        ``name -> side`` or ``name -> (side, start, stop)``.  Defaults to one
        patch per side named after the side.
    """
    if dim not in (1, 2):
        raise GridError(f"dim must be 1 or 2, got {dim}")
    extents = [tuple(e) for e in extents]
    cells = [int(c) for c in np.atleast_1d(cells)]
    if len(extents) != dim or len(cells) != dim:
        raise GridError("extents and cells must have one entry per axis")
    for (a, b) in extents:
        if not b - a > 0:
            raise GridError(f"non-positive extent [{a}, {b}]")
    for n in cells:
        if n < 4:
            raise GridError(f"stencil needs at least 4 cells per axis, got {n}")

    probe = Grid(dim, extents, cells, {})
    if patch_labels is None:
        patch_labels = {s: s for s in probe.sides}
    patches = {}
    for name, spec in patch_labels.items():
        if isinstance(spec, str):
            side, start, stop = spec, 0, probe.nfaces(spec) if spec in SIDES else 0
        else:
            side, start, stop = spec
        if side not in probe.sides:
            raise GridError(f"patch {name!r}: unknown side {side!r} for dim={dim}")
        patches[name] = Patch(name, side, int(start), int(stop))

    for side in probe.sides:
        owner = np.zeros(probe.nfaces(side), dtype=int)
        for p in patches.values():
            if p.side == side:
                if not 0 <= p.start < p.stop <= probe.nfaces(side):
                    raise GridError(f"patch {p.name!r} has an invalid face range")
                owner[p.start:p.stop] += 1
        if np.any(owner != 1):
            bad = int(np.flatnonzero(owner != 1)[0])
            raise GridError(
                f"patches must cover each boundary face exactly once (side {side!r}, face {bad})"
            )
    return Grid(dim, extents, cells, patches)


# ---------------------------------------------------------------------------
# Fields


@dataclass(frozen=True, eq=False)
class Field:
    """Tensor field or tensor density on a grid.

    ``rank`` is ``(p, q)``: p contravariant and q covariant indices.
    ``values`` has shape ``(dim,) * (p + q) + grid.shape``.
    """

    grid: Grid
    values: np.ndarray
    rank: tuple = (0, 0)
    kind: str = "function"

    def __post_init__(self):
        p, q = self.rank
        if p + q > 2:
            raise GridError("tensor rank p+q must be at most 2")
        if self.kind not in ("function", "density"):
            raise GridError(f"unknown field kind {self.kind!r}")
        expected = (self.grid.dim,) * (p + q) + self.grid.shape
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != expected:
            raise GridError(f"values shape {vals.shape} != {expected}")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def _check(self, other):
        if not isinstance(other, Field):
            return
        if other.grid != self.grid or other.rank != self.rank or other.kind != self.kind:
            raise GridError("field arithmetic needs identical grid, rank and kind")

    def _wrap(self, vals):
        return Field(self.grid, vals, self.rank, self.kind)

    def __add__(self, other):
        self._check(other)
        return self._wrap(self.values + (other.values if isinstance(other, Field) else other))

    def __sub__(self, other):
        self._check(other)
        return self._wrap(self.values - (other.values if isinstance(other, Field) else other))

    def __mul__(self, scalar):
        if isinstance(scalar, Field):
            raise GridError("use explicit contractions for field products")
        return self._wrap(self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return self._wrap(-self.values)


@dataclass(frozen=True, eq=False)
class BoundaryField:
    """Values on boundary faces.

    ``data`` maps side -> array of shape ``comp + (nfaces_on_patch,)``.  A
    field on a single patch has one entry; the whole boundary has one entry per
    side.
    """

    grid: Grid
    data: dict
    patch: Patch = None

    def __post_init__(self):
        for side, vals in self.data.items():
            n = self.patch.nfaces if self.patch is not None else self.grid.nfaces(side)
            if np.shape(vals)[-1] != n:
                raise GridError(f"boundary values on {side!r} need {n} faces")


def field_from_function(grid, fn, rank=(0, 0), kind="function"):
    """Sample ``fn(*coords)`` at cell centres."""
    vals = np.asarray(fn(*grid.mesh()), dtype=float)
    vals = np.broadcast_to(vals, (grid.dim,) * sum(rank) + grid.shape)
    return Field(grid, vals, rank, kind)


# ---------------------------------------------------------------------------
# Ghost layers


def _fit_weights(constraints, targets):
    """Weights mapping constraint data to target data through one polynomial.

    Positions are in units of the spacing along the inward coordinate, with
    the boundary face at 0 and cell k at k + 1/2.  Each entry is
    ``(position, order)`` with order 0 for a value and 1 for a first
    derivative.
    """
    n = len(constraints)

    def row(pos, order):
        k = np.arange(n)
        if order == 0:
            return pos ** k
        r = np.zeros(n)
        r[1:] = k[1:] * pos ** (k[1:] - 1)
        return r

    A = np.array([row(*c) for c in constraints])
    E = np.array([row(*t) for t in targets])
    return E @ np.linalg.inv(A)


_TARGETS = [(-0.5, 0), (-1.5, 0), (0.0, 0), (0.0, 1)]
_W = {
    "free": _fit_weights([(0.5, 0), (1.5, 0), (2.5, 0)], _TARGETS),
    "value": _fit_weights([(0.0, 0), (0.5, 0), (1.5, 0)], _TARGETS),
    "neumann": _fit_weights([(0.0, 1), (0.5, 0), (1.5, 0), (2.5, 0)], _TARGETS),
    "value_neumann": _fit_weights([(0.0, 0), (0.0, 1), (0.5, 0), (1.5, 0)], _TARGETS),
}


def _inward(values, axis, lo, count):
    """Cells counted from one side inward, as a list of slices along ``axis``."""
    n = values.shape[axis]
    out = []
    for k in range(count):
        i = k if lo else n - 1 - k
        out.append(np.take(values, i, axis=axis))
    return out


def side_ghosts(values, axis, dx, lo, value=None, normal_deriv=None):
    """Ghost layers and face data on one side.

    Parameters
    ----------
    values : ndarray
        Cell values; ``axis`` is the array axis normal to the side.
    value, normal_deriv : ndarray or None
        Face constraints broadcastable to the face slice.  NaN entries leave
        the face unconstrained.  ``normal_deriv`` is the outward normal
        derivative.

    Returns
    -------
    g1, g2, face_value, face_normal_deriv
        Ghost layers ordered outward from the boundary.
    """
    f = _inward(values, axis, lo, 3)
    shape = f[0].shape

    def apply(key, data):
        W = _W[key]
        res = [sum(W[t, j] * data[j] for j in range(len(data))) for t in range(4)]
        # the fitted derivative is per unit inward coordinate
        res[3] = -res[3] / dx
        return res

    has_v = np.zeros(shape, bool) if value is None else ~np.isnan(np.broadcast_to(value, shape))
    has_d = (
        np.zeros(shape, bool)
        if normal_deriv is None
        else ~np.isnan(np.broadcast_to(normal_deriv, shape))
    )
    v = 0.0 if value is None else np.nan_to_num(np.broadcast_to(value, shape))
    # inward-coordinate derivative data in units of the spacing
    d = 0.0 if normal_deriv is None else -np.nan_to_num(np.broadcast_to(normal_deriv, shape)) * dx

    res = apply("free", f[:3])
    if has_v.any():
        alt = apply("value", [v, f[0], f[1]])
        res = [np.where(has_v & ~has_d, a, r) for a, r in zip(alt, res)]
    if has_d.any():
        alt = apply("neumann", [d, f[0], f[1], f[2]])
        res = [np.where(has_d & ~has_v, a, r) for a, r in zip(alt, res)]
        if has_v.any():
            alt = apply("value_neumann", [v, d, f[0], f[1]])
            res = [np.where(has_d & has_v, a, r) for a, r in zip(alt, res)]
    g1, g2, fv, fd = res
    return g1, g2, fv, fd


def pad(values, axis, dx, lo=None, hi=None):
    """Pad ``values`` with two ghost layers along array axis ``axis``.

    ``lo`` / ``hi`` are optional dicts with keys ``value`` and
    ``normal_deriv`` (see :func:`side_ghosts`).  Returns the padded array and
    the face values and outward normal derivatives on both sides.
    """
    lo = lo or {}
    hi = hi or {}
    g1l, g2l, fvl, fdl = side_ghosts(values, axis, dx, True, **lo)
    g1h, g2h, fvh, fdh = side_ghosts(values, axis, dx, False, **hi)
    e = lambda a: np.expand_dims(a, axis)
    padded = np.concatenate([e(g2l), e(g1l), values, e(g1h), e(g2h)], axis=axis)
    return padded, (fvl, fvh), (fdl, fdh)


def cdiff(padded, axis, dx, ext=0):
    """Centred difference of an array padded with two ghosts along ``axis``.

    Returns values on the cells plus ``ext`` ghost layers on each side.
    """
    n = padded.shape[axis] - 2 * NGHOST
    start = NGHOST - ext
    m = n + 2 * ext
    up = np.take(padded, np.arange(start + 1, start + 1 + m), axis=axis)
    dn = np.take(padded, np.arange(start - 1, start - 1 + m), axis=axis)
    return (up - dn) / (2.0 * dx)


def interior_of(padded, axis, ext=0):
    n = padded.shape[axis] - 2 * NGHOST
    return np.take(padded, np.arange(NGHOST - ext, NGHOST + n + ext), axis=axis)


def face_flux_divergence(padded_flux, axis, dx, face_lo, face_hi):
    """Conservative difference of a flux component along one axis.

    Interior face values use the four-point interpolant, which is exact for
    cubics; the two boundary faces take the supplied values so that the sum
    over cells telescopes to the boundary fluxes exactly.
    """
    n = padded_flux.shape[axis] - 2 * NGHOST
    t = lambda i0: np.take(padded_flux, np.arange(i0, i0 + n - 1), axis=axis)
    inner = (-t(1) + 9.0 * t(2) + 9.0 * t(3) - t(4)) / 16.0
    e = lambda a: np.expand_dims(a, axis)
    faces = np.concatenate([e(face_lo), inner, e(face_hi)], axis=axis)
    return np.diff(faces, axis=axis) / dx


# ---------------------------------------------------------------------------
# Pointwise tensor algebra


def kappa_hat(k, p, q, dim):
    """The (p+1, q+1) tensor linearising the Lie derivative of a (p, q) tensor.

    Layout of the result: ``(a_1..a_p, c, b_1..b_q, d) + rest`` with

        hat^{a..c}_{b..d} = sum_r k^{a}_{b_1..d..b_q} delta^c_{b_r}
                          - sum_r k^{a_1..c..a_p}_{b} delta^{a_r}_d

    where d (resp. c) replaces the r-th lower (upper) slot.
    """
    k = np.asarray(k, dtype=float)
    rest = k.shape[p + q:]
    out = np.zeros((dim,) * (p + q + 2) + rest)
    for idx in product(range(dim), repeat=p + q + 2):
        a = idx[:p]
        c = idx[p]
        b = idx[p + 1:p + 1 + q]
        d = idx[p + 1 + q]
        val = 0.0
        for r in range(q):
            if c == b[r]:
                val = val + k[a + b[:r] + (d,) + b[r + 1:]]
        for r in range(p):
            if a[r] == d:
                val = val - k[a[:r] + (c,) + a[r + 1:] + b]
        out[idx] = val
    return out


def hat_contract_grad(hat, grad_u, p, q, dim):
    """(hat : grad u)^{a}_{b} = hat^{a c}_{b d} d_c u^d, with grad_u[c, d] = d_c u^d."""
    rest = hat.shape[p + q + 2:]
    out = np.zeros((dim,) * (p + q) + rest)
    for idx in product(range(dim), repeat=p + q):
        a, b = idx[:p], idx[p:]
        acc = 0.0
        for c in range(dim):
            for d in range(dim):
                acc = acc + hat[a + (c,) + b + (d,)] * grad_u[c, d]
        out[idx] = acc
    return out


def triple_dot(t, hat, p, q, dim):
    """Contract a (p, q) tensor with the hat of its dual, leaving a (1, 1) tensor.

    ``hat`` has layout ``(B_1..B_q, c, A_1..A_p, d)`` and the result is
    ``sum t^{A}_{B} hat^{B c}_{A d}`` indexed ``[c, d]``.
    """
    rest = t.shape[p + q:]
    out = np.zeros((dim, dim) + rest)
    for idx in product(range(dim), repeat=p + q):
        A, B = idx[:p], idx[p:]
        for c in range(dim):
            for d in range(dim):
                out[c, d] = out[c, d] + t[idx] * hat[B + (c,) + A + (d,)]
    return out


def full_contract(a, b, nidx):
    """Sum over all ``nidx`` leading tensor indices of a product."""
    axes = tuple(range(nidx))
    return np.sum(a * b, axis=axes) if nidx else a * b


def lie_from_jets(u, grad_u, t, grad_t, p, q, kind, dim):
    """Lie derivative of a tensor (density) from pointwise values and gradients.

    ``grad_u[c, d]`` is d_c u^d and ``grad_t[c]`` is d_c t.  Functions use
    u.grad t + hat(t):grad u; densities add t div u.
    """
    adv = sum(u[c] * grad_t[c] for c in range(dim))
    hat = kappa_hat(t, p, q, dim)
    out = adv + hat_contract_grad(hat, grad_u, p, q, dim)
    if kind == "density":
        div_u = sum(grad_u[c, c] for c in range(dim))
        out = out + t * div_u
    return out


# ---------------------------------------------------------------------------
# Field operators (free extrapolation at the boundary)


def _grid_axis(values, grid, axis):
    return values.ndim - grid.dim + axis


def _grad_array(values, grid):
    """d_c of every component, stacked on a new leading axis."""
    out = []
    for ax in range(grid.dim):
        arr_ax = _grid_axis(values, grid, ax)
        padded, _, _ = pad(values, arr_ax, grid.spacing[ax])
        out.append(cdiff(padded, arr_ax, grid.spacing[ax]))
    return np.stack(out)


def gradient(f):
    """Gradient of a scalar field; second order, exact for linear data."""
    if f.rank != (0, 0):
        raise GridError("gradient needs a scalar field")
    return Field(f.grid, _grad_array(f.values, f.grid), (0, 1), f.kind)


def divergence(v):
    """Contract the first contravariant index with d_c.

    For a (1, 1) tensor this is div(sigma)_d = d_c sigma^c_d.
    """
    p, q = v.rank
    if p < 1:
        raise GridError("divergence needs a contravariant index")
    g = _grad_array(v.values, v.grid)
    out = sum(g[c, c] for c in range(v.grid.dim))
    return Field(v.grid, out, (p - 1, q), v.kind)


def curl2d(v):
    """Scalar curl d_x v_y - d_y v_x of a planar vector field."""
    if v.grid.dim != 2:
        raise GridError("curl2d needs a 2D grid")
    if v.rank[0] + v.rank[1] != 1:
        raise GridError("curl2d needs a vector field")
    g = _grad_array(v.values, v.grid)
    return Field(v.grid, g[0, 1] - g[1, 0], (0, 0), "function")


def curl_scalar(w, grid):
    """In-plane curl of an out-of-plane scalar: (d_y w, -d_x w)."""
    g = _grad_array(np.asarray(w, float), grid)
    return np.stack([g[1], -g[0]])


def cross_planar(a, b):
    """Out-of-plane component of a x b for planar vectors."""
    return a[0] * b[1] - a[1] * b[0]


def lie_derivative_momentum(u, m):
    """Lie derivative of a 1-form density along a vector field.

    u.grad m + (grad u)^T m + m div u, evaluated componentwise.
    """
    if u.kind != "function" or u.rank != (1, 0):
        raise GridError("u must be a vector field (function kind)")
    if m.kind != "density" or m.rank != (0, 1):
        raise GridError("m must be a 1-form density")
    if u.grid != m.grid:
        raise GridError("grid mismatch")
    dim = u.grid.dim
    gu = _grad_array(u.values, u.grid)
    gm = _grad_array(m.values, m.grid)
    uu, mm = u.values, m.values
    out = np.zeros_like(mm)
    div_u = sum(gu[c, c] for c in range(dim))
    for i in range(dim):
        out[i] = (
            sum(uu[j] * gm[j, i] for j in range(dim))
            + sum(gu[i, j] * mm[j] for j in range(dim))
            + mm[i] * div_u
        )
    return Field(u.grid, out, (0, 1), "density")


def lie_derivative_tensor(u, t):
    """Lie derivative of any field with p+q <= 2, through the hat tensor."""
    if u.kind != "function" or u.rank != (1, 0):
        raise GridError("u must be a vector field (function kind)")
    if u.grid != t.grid:
        raise GridError("grid mismatch")
    p, q = t.rank
    if p + q > 2:
        raise GridError("unsupported rank")
    dim = u.grid.dim
    gu = _grad_array(u.values, u.grid)
    gt = _grad_array(t.values, t.grid)
    out = lie_from_jets(u.values, gu, t.values, gt, p, q, t.kind, dim)
    return Field(t.grid, out, t.rank, t.kind)


def volume_integral(d):
    """Midpoint-rule integral of a density (componentwise for tensors)."""
    if d.kind != "density":
        raise GridError("only densities can be integrated over volume")
    axes = tuple(range(d.values.ndim - d.grid.dim, d.values.ndim))
    total = np.sum(d.values, axis=axes) * d.grid.cell_volume
    return float(total) if d.rank == (0, 0) else total


def boundary_integral(bf):
    """Sum of face values times face area."""
    if not bf.data:
        raise GridError("empty boundary field")
    total = 0.0
    for side, vals in bf.data.items():
        if np.shape(vals)[-1] == 0:
            raise GridError("empty patch")
        total = total + np.sum(vals, axis=-1) * bf.grid.face_area(side)
    return total


def _side_trace(values, grid, side):
    axis, sign = SIDES[side]
    arr_ax = _grid_axis(values, grid, axis)
    _, _, fv, _ = side_ghosts(values, arr_ax, grid.spacing[axis], sign < 0)
    return fv.reshape(fv.shape[: values.ndim - grid.dim] + (-1,))


def boundary_trace(f, patch=None):
    """Quadratic extrapolation of cell values to face centres.

    ``patch`` is a Patch, a patch name, or None for the whole boundary.
    """
    grid = f.grid
    if isinstance(patch, str):
        patch = grid.patches[patch]
    if patch is None:
        data = {s: _side_trace(f.values, grid, s) for s in grid.sides}
        return BoundaryField(grid, data)
    full = _side_trace(f.values, grid, patch.side)
    return BoundaryField(grid, {patch.side: full[..., patch.start:patch.stop]}, patch)


def normal_component(bf):
    """Contract the leading vector index of a boundary field with n."""
    data = {}
    for side, vals in bf.data.items():
        axis, sign = SIDES[side]
        data[side] = sign * np.asarray(vals)[axis]
    return BoundaryField(bf.grid, data, bf.patch)


# ---------------------------------------------------------------------------
# Snapshots


def write_snapshot(path, grid, columns, binary=False):
    """Write cell data as CSV with header ``x[,y],name...``, atomically.

    ``columns`` maps component names to arrays of grid shape.  With
    ``binary=True`` a little-endian float64 row-major ``.bin`` file with the
    same column order is written next to the CSV.
    """
    coords = grid.mesh()
    names = ["x", "y"][: grid.dim] + list(columns)
    table = np.column_stack(
        [c.ravel() for c in coords] + [np.asarray(v, float).ravel() for v in columns.values()]
    )
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(",".join(names) + "\n")
        for row in table:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    os.replace(tmp, path)
    if binary:
        bpath = os.path.splitext(path)[0] + ".bin"
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(table.astype("<f8").tobytes(order="C"))
        os.replace(tmp, bpath)
    return path


def read_snapshot(path):
    """Read a CSV snapshot back as (header, table)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, table
