"""Flow maps, pushforwards and the boundary Piola identity at desk scale.

Labels X are advected by dphi/dt = u(t, phi) together with the Jacobian
dJ/dt = (div u)(t, phi) J and a material density d(varrho)/dt = theta(t, phi) J.
The Eulerian density is recovered as rho(phi(X)) = varrho(X) / J(X).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator, griddata
from scipy.spatial import cKDTree

from .budgets import quantity_budget
from .dynamics import apply_boundary_conditions, cfl_limit, step
from .grid import cdiff, pad
from .sources import evaluate_bulk, split_sources


class MaterialError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Velocity sources


@dataclass
class AnalyticVelocity:
    """u(t, x) and div u(t, x) given as callables on (n, d) point arrays."""

    u: object
    div: object
    theta: object = None

    def velocity(self, t, x):
        return np.asarray(self.u(t, x), float).reshape(x.shape)

    def divergence(self, t, x):
        return np.broadcast_to(np.asarray(self.div(t, x), float), x.shape[:1])

    def source(self, t, x):
        if self.theta is None:
            return np.zeros(x.shape[0])
        return np.broadcast_to(np.asarray(self.theta(t, x), float), x.shape[:1])


class FrameVelocity:
    """Stored Eulerian frames, linear in space between nodes and linear in time.

    Nodes are the cell centres plus, per axis, the boundary trace (1D) or
    the ghost layers of the boundary solve (2D).  With ``clamp`` the field
    outside the node box takes the value at the nearest node, while div u
    and theta vanish there, which models a uniform exterior state.
    Otherwise leaving the box is an error.
    """

    def __init__(self, times, nodes, u, div, theta, clamp=False):
        self.times = np.asarray(times, float)
        if np.any(np.diff(self.times) <= 0):
            raise MaterialError("frame times must increase")
        self.nodes = [np.asarray(n, float) for n in nodes]
        self.lo = np.array([n[0] for n in self.nodes])
        self.hi = np.array([n[-1] for n in self.nodes])
        self.clamp = clamp
        self.dim = len(self.nodes)
        self._u = [[RegularGridInterpolator(self.nodes, f[c]) for c in range(self.dim)] for f in u]
        self._div = [RegularGridInterpolator(self.nodes, f) for f in div]
        self._theta = [RegularGridInterpolator(self.nodes, f) for f in theta]

    def _where(self, t, x):
        x = np.asarray(x, float)
        inside = np.all((x >= self.lo - 1e-12) & (x <= self.hi + 1e-12), axis=1)
        if not self.clamp and not np.all(inside):
            raise MaterialError("label left the bounding box of the stored velocity")
        xc = np.clip(x, self.lo, self.hi)
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        w = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        if w < -1e-9 or w > 1 + 1e-9:
            raise MaterialError(f"time {t} outside the stored frames")
        return xc, inside, k, w

    def _blend(self, interps, k, w, xc):
        a = interps[k](xc)
        if w == 0.0:
            return a
        b = interps[k + 1](xc)
        return a if w == 0 else (1 - w) * a + w * b

    def velocity(self, t, x):
        xc, _, k, w = self._where(t, x)
        return np.stack([self._blend([f[c] for f in self._u], k, w, xc) for c in range(self.dim)], axis=1)

    def divergence(self, t, x):
        xc, inside, k, w = self._where(t, x)
        return np.where(inside, self._blend(self._div, k, w, xc), 0.0)

    def source(self, t, x):
        xc, inside, k, w = self._where(t, x)
        return np.where(inside, self._blend(self._theta, k, w, xc), 0.0)


def _edge_extend(values, face_lo, face_hi):
    return np.concatenate([np.atleast_1d(face_lo), values, np.atleast_1d(face_hi)])


def frames_from_run(run):
    """FrameVelocity over the stored states of an Eulerian run."""
    grid = run.grid
    model = run.model
    dim = grid.dim
    us, divs, thetas = [], [], []
    for st in run.states:
        prep = apply_boundary_conditions(model, st, run.closures)
        bulk = evaluate_bulk(run.sources, grid, model, st.t)
        theta = np.sum(bulk.theta_rho, axis=0)
        div = sum(cdiff(prep.padded[a]["u"][a], a, grid.spacing[a]) for a in range(dim))
        if dim == 1:
            lo, hi = prep.traces["left"], prep.traces["right"]
            u = np.stack([_edge_extend(st.u[0], np.ravel(lo["u"][0]), np.ravel(hi["u"][0]))])
            # one-sided second-order end values of the cell divergence
            div = _edge_extend(div, 1.5 * div[0] - 0.5 * div[1], 1.5 * div[-1] - 0.5 * div[-2])
            theta = _edge_extend(theta, 1.5 * theta[0] - 0.5 * theta[1], 1.5 * theta[-1] - 0.5 * theta[-2])
        else:
            u = np.stack([_pad_all(st.u[c], grid) for c in range(dim)])
            div = _pad_all(div, grid)
            theta = _pad_all(theta, grid)
        us.append(u)
        divs.append(div)
        thetas.append(theta)
    if dim == 1:
        a, b = grid.extents[0]
        nodes = [_edge_extend(grid.centers(0), a, b)]
    else:
        nodes = [grid.centers(a, ghosts=2) for a in range(dim)]
    return FrameVelocity(run.times, nodes, us, divs, thetas, clamp=(dim == 1))


def _pad_all(values, grid):
    out = values
    for a in range(grid.dim):
        out, _, _ = pad(out, a, grid.spacing[a])
    return out


# ---------------------------------------------------------------------------
# Flow maps


@dataclass
class FlowMap:
    """Labels on a lattice of shape ``shape`` with their images and Jacobians.

    ``rho_mat`` is the material density carried along the labels; ``active``
    selects the labels used by the pushforward.
    """

    labels: np.ndarray
    shape: tuple
    positions: np.ndarray
    jac: np.ndarray
    t: float = 0.0
    rho_mat: np.ndarray = None
    active: np.ndarray = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, float)
        self.positions = np.asarray(self.positions, float)
        self.jac = np.asarray(self.jac, float)
        if self.active is None:
            self.active = np.ones(len(self.labels), bool)
        if np.any(self.jac[self.active] <= 0):
            raise MaterialError("flow map lost orientation (J <= 0)")

    @property
    def dim(self):
        return self.labels.shape[1]

    @property
    def spacing(self):
        return np.array([_lattice_step(self.labels, self.shape, a) for a in range(self.dim)])


def _lattice_step(labels, shape, a):
    grid = labels.reshape(tuple(shape) + (labels.shape[1],))
    idx = [0] * len(shape)
    idx2 = list(idx)
    idx2[a] = 1
    return float(grid[tuple(idx2)][a] - grid[tuple(idx)][a])


def label_lattice(extents, counts):
    """Cell-centred label lattice; returns (labels (n, d), shape)."""
    axes = [a + (np.arange(n) + 0.5) * (b - a) / n for (a, b), n in zip(extents, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1), tuple(counts)


def identity_map(labels, shape, rho_mat=None):
    return FlowMap(labels, shape, labels.copy(), np.ones(len(labels)), 0.0,
                   None if rho_mat is None else np.asarray(rho_mat, float).copy())


def map_from_function(labels, shape, phi, jac, t=0.0):
    """FlowMap with positions phi(X) and Jacobians jac(X) given in closed form."""
    return FlowMap(labels, shape, np.asarray(phi(labels), float), np.asarray(jac(labels), float), t)


def integrate_flow_map(velocity, labels, t0, t1, dt, shape=None, rho_mat=None):
    """RK4 for (phi, J, varrho) from t0 to t1.

    ``velocity`` provides velocity(t, x), divergence(t, x) and optionally
    source(t, x).
    """
    labels = np.asarray(labels, float)
    if labels.ndim == 1:
        labels = labels[:, None]
    shape = shape or (len(labels),)
    n = max(1, int(round((t1 - t0) / dt)))
    if abs(n * dt - (t1 - t0)) > 1e-9 * max(1.0, abs(t1 - t0)):
        raise MaterialError("t1 - t0 must be a multiple of dt")
    x = labels.copy()
    J = np.ones(len(labels))
    R = np.ones(len(labels)) if rho_mat is None else np.asarray(rho_mat, float).copy()
    src = getattr(velocity, "source", None)

    def rhs(t, x, J):
        v = velocity.velocity(t, x)
        d = velocity.divergence(t, x)
        th = src(t, x) if src is not None else 0.0
        return v, d * J, th * J

    t = t0
    for i in range(n):
        xa, Ja = x, J
        k1 = rhs(t, xa, Ja)
        k2 = rhs(t + dt / 2, xa + dt / 2 * k1[0], Ja + dt / 2 * k1[1])
        k3 = rhs(t + dt / 2, xa + dt / 2 * k2[0], Ja + dt / 2 * k2[1])
        k4 = rhs(t + dt, xa + dt * k3[0], Ja + dt * k3[1])
        comb = [(p + 2 * q + 2 * r + w) / 6 for p, q, r, w in zip(k1, k2, k3, k4)]
        x = xa + dt * comb[0]
        J = Ja + dt * comb[1]
        R = R + dt * comb[2]
        t = t0 + (i + 1) * dt
    return FlowMap(labels, tuple(shape), x, J, t1, R)


# ---------------------------------------------------------------------------
# Pushforward


@dataclass
class Pushforward:
    rho: np.ndarray
    undersampled: list = field(default_factory=list)


def pushforward_density(rho_mat, flowmap, grid, min_labels=4):
    """rho = (varrho / J) o phi^{-1} interpolated from the label images to cells.

    Cells holding fewer than ``min_labels`` images are reported.
    """
    rho_mat = np.broadcast_to(np.asarray(rho_mat, float), flowmap.jac.shape)
    a = flowmap.active
    vals = rho_mat[a] / flowmap.jac[a]
    pts = flowmap.positions[a]
    if grid.dim != flowmap.dim:
        raise MaterialError("grid and flow map dimensions differ")
    # occupancy count per cell
    idx = []
    ok = np.ones(len(pts), bool)
    for ax in range(grid.dim):
        lo, _ = grid.extents[ax]
        i = np.floor((pts[:, ax] - lo) / grid.spacing[ax]).astype(int)
        ok &= (i >= 0) & (i < grid.shape[ax])
        idx.append(i)
    counts = np.zeros(grid.shape, int)
    np.add.at(counts, tuple(i[ok] for i in idx), 1)
    under = [tuple(int(v) for v in c) for c in np.argwhere(counts < min_labels)]
    if grid.dim == 1:
        order = np.argsort(pts[:, 0], kind="stable")
        rho = np.interp(grid.centers(0), pts[order, 0], vals[order], left=np.nan, right=np.nan)
    else:
        mesh = grid.mesh()
        rho = griddata(pts, vals, tuple(mesh), method="cubic")
    return Pushforward(rho, under)


# ---------------------------------------------------------------------------
# Deformation gradient and the boundary Piola identity


def deformation_gradient(flowmap, k=10, points=None):
    """Least-squares quadratic fit of phi over the k nearest labels; returns (n, d, d)."""
    X, Y = flowmap.labels, flowmap.positions
    d = flowmap.dim
    pts = np.arange(len(X)) if points is None else np.asarray(points)
    if d == 1:
        k = min(k, 5)
    tree = cKDTree(X)
    h = flowmap.spacing
    F = np.empty((len(pts), d, d))
    for n, p in enumerate(pts):
        _, nb = tree.query(X[p], k=k)
        nb = np.sort(nb)
        dX = (X[nb] - X[p]) / h
        cols = [np.ones(len(nb))] + [dX[:, i] for i in range(d)]
        cols += [dX[:, i] * dX[:, j] for i in range(d) for j in range(i, d)]
        A = np.stack(cols, axis=1)
        if np.linalg.matrix_rank(A) < A.shape[1]:
            raise MaterialError("degenerate neighbourhood for the deformation gradient")
        coef, *_ = np.linalg.lstsq(A, Y[nb], rcond=None)
        F[n] = (coef[1:1 + d] / h[:, None]).T
    return F


def jacobian_consistency(flowmap, k=10):
    """max |J_ode - det F_fit| over active labels."""
    pts = np.flatnonzero(flowmap.active)
    F = deformation_gradient(flowmap, k, pts)
    return float(np.max(np.abs(flowmap.jac[pts] - np.linalg.det(F))))


def label_boundary(shape, dim):
    """Boundary lattice points of a label rectangle with outward normals.

    Returns a list of (index array, N) per edge; in 2D corners are dropped
    and each edge is ordered so that N = (T_y, -T_x) with T the direction
    of increasing index.
    """
    if dim == 1:
        return [(np.array([0]), np.array([-1.0])), (np.array([shape[0] - 1]), np.array([1.0]))]
    nx, ny = shape
    ij = np.arange(nx * ny).reshape(nx, ny)
    return [
        (ij[1:-1, 0][::-1], np.array([0.0, -1.0])),
        (ij[-1, 1:-1], np.array([1.0, 0.0])),
        (ij[1:-1, -1], np.array([0.0, 1.0])),
        (ij[0, 1:-1][::-1], np.array([-1.0, 0.0])),
    ]


def boundary_piola_residual(flowmap, w, k=10):
    """max over tracked label-boundary points of |LHS - RHS| with

    LHS = J N.(F^{-1} w(phi)),  RHS = (n.w)(phi) J_boundary.

    F comes from a local fit of neighbouring labels and J from the flow map;
    n J_boundary is the rotated tangent of the mapped boundary (2D) or the
    label normal (1D).
    """
    d = flowmap.dim
    h = flowmap.spacing
    worst = 0.0
    for idx, N in label_boundary(flowmap.shape, d):
        F = deformation_gradient(flowmap, k, idx)
        y = flowmap.positions[idx]
        wv = np.asarray(w(y), float).reshape(y.shape)
        lhs = flowmap.jac[idx] * np.einsum("i,nij,nj->n", N, np.linalg.inv(F), wv)
        if d == 1:
            rhs = N[0] * wv[:, 0]
        else:
            T = np.array([-N[1], N[0]])
            a = int(np.argmax(np.abs(T)))
            step_ = h[a] * np.sign(T[a])
            # neighbours one lattice step along +T and -T
            stride = flowmap.shape[1] if a == 0 else 1
            sgn = 1 if step_ > 0 else -1
            plus = flowmap.positions[idx + sgn * stride]
            minus = flowmap.positions[idx - sgn * stride]
            t = (plus - minus) / (2 * abs(step_))
            rhs = wv[:, 0] * t[:, 1] - wv[:, 1] * t[:, 0]
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


# ---------------------------------------------------------------------------
# Lagrangian/Eulerian mass balance in 1D


@dataclass
class EulerianRun:
    model: object
    grid: object
    times: list
    states: list
    sources: object = None
    closures: dict = None


def record_run(model, state, sources=None, closures=None, t_end=1.0, dt=None, cfl=0.4):
    """Store every state of an RK4 run at a fixed step (dt chosen from the CFL bound)."""
    src, closures = split_sources(sources, closures)
    if dt is None:
        dt0 = cfl_limit(model, state, cfl)
        n = int(np.ceil(t_end / dt0))
        dt = t_end / n
    n = int(round(t_end / dt))
    states, times = [state], [state.t]
    st = state
    for _ in range(n):
        st = step(model, st, src, closures, dt)
        states.append(st)
        times.append(st.t)
    return EulerianRun(model, state.grid, times, states, src, closures)


def _one_sided(x_of, y_of, target, idx):
    """Quadratic through three samples, evaluated at ``target``."""
    return float(np.polyval(np.polyfit(y_of[idx], x_of[idx], 2), target))


def material_mass_1d(flowmap, a, b):
    """int over phi^{-1}([a, b]) of varrho dX.

    The end labels phi^{-1}(a), phi^{-1}(b) and the end values of varrho are
    reconstructed from the three nearest labels whose images lie inside, so
    the exterior state does not enter; the rest is the trapezoidal rule.
    """
    act = flowmap.active
    X, Y, R = flowmap.labels[act, 0], flowmap.positions[act, 0], flowmap.rho_mat[act]
    if not (Y[0] < a and Y[-1] > b):
        raise MaterialError("label cloud does not cover the domain")
    inner = np.flatnonzero((Y >= a) & (Y <= b))
    if len(inner) < 3:
        raise MaterialError("fewer than three labels inside the domain")
    lo, hi = inner[:3], inner[-3:]
    xa, xb = _one_sided(X, Y, a, lo), _one_sided(X, Y, b, hi)
    ra, rb = _one_sided(R, X, xa, lo), _one_sided(R, X, xb, hi)
    Xs = np.concatenate([[xa], X[inner], [xb]])
    Rs = np.concatenate([[ra], R[inner], [rb]])
    return float(np.trapezoid(Rs, Xs))


@dataclass
class EquivalenceResult:
    pushforward_error: float
    pushforward_rms: float
    material_mass_change: float
    eulerian_mass_change: float
    budget_mass_change: float
    boundary_inflow: float
    undersampled: list

    @property
    def mass_discrepancy(self):
        return abs(self.material_mass_change - self.budget_mass_change)


def _simpson(values, times):
    v, t = np.asarray(values), np.asarray(times)
    if len(v) % 2 == 1 and len(v) >= 3:
        h = (t[-1] - t[0]) / (len(v) - 1)
        return float(h / 3 * (v[0] + v[-1] + 4 * v[1:-1:2].sum() + 2 * v[2:-1:2].sum()))
    return float(np.trapezoid(v, t))


def equivalence_check_1d(model, run, labels_per_cell=4, margin_cells=None):
    """Compare the material-side evolution with a stored 1D Eulerian run.

    The flow map steps with twice the run step so that every RK4 stage
    lands on a stored frame.  Labels start on a lattice covering the domain
    and a margin band outside it; the band is wide enough that inflow
    brings pre-seeded labels.  Reports the pushforward error at the final
    time and the mass balance on phi^{-1}(Omega) against the Eulerian
    bulk and boundary terms.
    """
    grid = run.grid
    if grid.dim != 1:
        raise MaterialError("equivalence check is one-dimensional")
    times = np.asarray(run.times)
    if len(times) < 3 or (len(times) - 1) % 2:
        raise MaterialError("need an even number of stored steps")
    if np.any(np.abs(np.diff(times, 2)) > 1e-9 * times[-1]):
        raise MaterialError("stored frames must be equally spaced")
    frames = frames_from_run(run)
    a, b = grid.extents[0]
    dx = grid.spacing[0]
    umax = max(float(np.max(np.abs(st.u))) for st in run.states)
    T = times[-1] - times[0]
    if margin_cells is None:
        margin_cells = int(np.ceil(umax * T / dx)) + 2
    L = margin_cells * dx
    counts = (grid.shape[0] + 2 * margin_cells) * labels_per_cell
    labels, shape = label_lattice([(a - L, b + L)], [counts])
    st0 = run.states[0]
    rho0 = _edge_extend(np.sum(st0.rho, axis=0), *_trace_rho(run, st0))
    nodes = frames.nodes[0]
    varrho = np.interp(labels[:, 0], nodes, rho0)
    fm = integrate_flow_map(frames, labels, times[0], times[-1], 2 * (times[1] - times[0]),
                            shape, varrho)
    init = FlowMap(labels, shape, labels.copy(), np.ones(len(labels)), times[0], varrho.copy())
    push = pushforward_density(fm.rho_mat, fm, grid, min_labels=1)
    rho_end = np.sum(run.states[-1].rho, axis=0)
    diff = push.rho - rho_end
    err = float(np.nanmax(np.abs(diff)))
    rms = float(np.sqrt(np.nanmean(diff ** 2)))
    mat_change = material_mass_1d(fm, a, b) - material_mass_1d(init, a, b)
    vol = grid.cell_volume
    eul_change = float((np.sum(rho_end) - np.sum(rho0[1:-1])) * vol)
    rates, inflow = [], []
    for st in run.states:
        rep = quantity_budget("mass", run.model, st, run.sources, run.closures)
        rates.append(rep.bulk + rep.boundary)
        inflow.append(rep.boundary)
    return EquivalenceResult(err, rms, mat_change, eul_change, _simpson(rates, times),
                             _simpson(inflow, times), push.undersampled)


def _trace_rho(run, st):
    prep = apply_boundary_conditions(run.model, st, run.closures)
    lo, hi = prep.traces["left"]["rho"], prep.traces["right"]["rho"]
    return float(np.sum(lo)), float(np.sum(hi))


__all__ = [
    "AnalyticVelocity", "FrameVelocity", "FlowMap", "Pushforward", "EulerianRun", "EquivalenceResult",
    "MaterialError", "label_lattice", "identity_map", "map_from_function", "integrate_flow_map",
    "pushforward_density", "deformation_gradient", "jacobian_consistency", "label_boundary",
    "boundary_piola_residual", "record_run", "frames_from_run", "material_mass_1d", "equivalence_check_1d",
]
