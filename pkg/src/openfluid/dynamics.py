"""Interior tendencies, open-boundary conditions and time stepping.

Boundary rows are imposed as constraints on the face traces of the ghost
polynomials.  A closure pins some traces (all of u, rho, s for inflow; only
u.n for inviscid outflow; ...), the remaining ones are extrapolated, and the
two ghost layers are filled from the resulting polynomial.  Mass, entropy and
species densities are transported in flux form, with boundary face fluxes
taken from the traces, so their volume integrals change only through the
boundary fluxes and bulk sources.  The momentum equation is assembled from
the Lie derivative of m = dl/du and the variational derivatives of the model.
"""

from dataclasses import dataclass, field
import warnings

import numpy as np

from .grid import (
    Field,
    SIDES,
    cdiff,
    cross_planar,
    curl2d,
    face_flux_divergence,
    full_contract,
    kappa_hat,
    lie_from_jets,
    pad,
    side_ghosts,
    triple_dot,
)
from .models import State
from .sources import FluxClosure, FluxValues, evaluate_bulk, evaluate_fluxes, pins, split_sources
from .thermo import pressure



class CFLError(ValueError):
    pass


class NumericalAbort(FloatingPointError):
    pass


@dataclass
class Tendency:
    du: np.ndarray
    dm: np.ndarray
    drho: np.ndarray
    ds: np.ndarray
    dadv: np.ndarray = None

    def check(self):
        for name in ("du", "dm", "drho", "ds", "dadv"):
            arr = getattr(self, name)
            if arr is not None and not np.all(np.isfinite(arr)):
                raise NumericalAbort(f"non-finite tendency in {name}")
        return self


@dataclass
class Prepared:
    """Ghosted primitives, face traces, fluxes and boundary-row residuals."""

    grid: object
    t: float
    padded: list
    aux_pad: list
    aux: dict
    traces: dict
    fluxes: dict
    patch_fluxes: dict
    residuals: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Stress of an advected tensor


def advected_stress(model, adv):
    """sigma^c_d for the model's advected tensor (pointwise).

    Densities: sigma = pi ⋮ hat(dl/dpi).  Fields: sigma = (dl/dk : k) delta
    + k ⋮ hat(dl/dk).
    """
    p, q = model.adv_rank
    dim = model.dim
    _, dea = model.adv_energy(adv)
    alpha = -dea
    sig = triple_dot(adv, kappa_hat(alpha, q, p, dim), p, q, dim)
    if model.adv_kind == "function":
        pair = full_contract(alpha, adv, p + q)
        for c in range(dim):
            sig[c, c] = sig[c, c] + pair
    return sig


def assemble_stress(advected, dl_dadv):
    """(1,1) stress induced by an advected tensor (Field API).

    ``dl_dadv`` holds the components of dl/d(advected), a tensor of the dual
    type.  The result is a (1,1) density.
    """
    p, q = advected.rank
    if p + q > 2:
        from .grid import GridError

        raise GridError("unsupported rank")
    dim = advected.grid.dim
    alpha = np.asarray(dl_dadv.values if isinstance(dl_dadv, Field) else dl_dadv, float)
    sig = triple_dot(advected.values, kappa_hat(alpha, q, p, dim), p, q, dim)
    if advected.kind == "function":
        pair = full_contract(alpha, advected.values, p + q)
        for c in range(dim):
            sig[c, c] = sig[c, c] + pair
    return Field(advected.grid, sig, (1, 1), "density")


# ---------------------------------------------------------------------------
# Boundary conditions


def _arr_axis(arr, dim, axis):
    return arr.ndim - dim + axis


def _face_shape(values, dim, axis):
    """Face arrays from side_ghosts drop the normal axis; give 1D a face axis."""
    return values if dim == 2 else values[..., None]


def _to_side(values, dim):
    return values if dim == 2 else values[..., 0]


def _primitives(model, state):
    prim = {"u": state.u, "rho": state.rho, "s": state.s}
    if model.has_adv:
        prim["adv"] = state.adv
    return prim


def _base_constraints(model, name, side):
    if model.korteweg and name == "rho":
        return {"normal_deriv": 0.0}
    return {}


def apply_boundary_conditions(model, state, closures=None, t=None):
    """Fill ghost layers so the face traces satisfy each closure's boundary rows.

    Parameters
    ----------
    closures : dict
        patch name -> FluxClosure.  Patches without a closure are treated as
        free_open.

    Returns
    -------
    Prepared
        Includes per-row residuals of the boundary conditions evaluated on
        the traces: ``mass``, ``entropy``, ``momentum`` and, for the
        Korteweg model, ``korteweg`` ((grad rho).n).
    """
    grid = state.grid
    dim = grid.dim
    t = state.t if t is None else t
    closures = dict(closures or {})
    for name, patch in grid.patches.items():
        if name not in closures:
            closures[name] = FluxClosure(patch, "free_open", {})
    prim = _primitives(model, state)

    # traces before any pinning
    free = {}
    for side in grid.sides:
        axis, sign = SIDES[side]
        lo = sign < 0
        dx = grid.spacing[axis]
        tr = {}
        for name, arr in prim.items():
            ax = _arr_axis(arr, dim, axis)
            _, _, fv, _ = side_ghosts(arr, ax, dx, lo, **_base_constraints(model, name, side))
            tr[name] = _face_shape(fv, dim, axis)
        tr["aux"] = model.aux(grid.face_coords(side), t)
        free[side] = tr

    # constraints from closures, assembled per side
    cons = {side: {} for side in grid.sides}
    for side in grid.sides:
        for patch in grid.patches_on(side):
            cl = closures[patch.name]
            sl = slice(patch.start, patch.stop)
            ftr = _slice_traces(free[side], sl)
            for key, val in pins(cl, model, grid, ftr, t).items():
                if key not in cons[side]:
                    cons[side][key] = np.full(free[side][key].shape, np.nan)
                cons[side][key][..., sl] = val

    padded = [dict() for _ in range(dim)]
    traces = {side: {} for side in grid.sides}
    dnorm = {}
    for axis in range(dim):
        dx = grid.spacing[axis]
        sides = [s for s in grid.sides if SIDES[s][0] == axis]
        lo_side = [s for s in sides if SIDES[s][1] < 0][0]
        hi_side = [s for s in sides if SIDES[s][1] > 0][0]
        for name, arr in prim.items():
            ax = _arr_axis(arr, dim, axis)
            spec = {}
            for side in (lo_side, hi_side):
                c = dict(_base_constraints(model, name, side))
                if name in cons[side]:
                    c["value"] = _to_side(cons[side][name], dim)
                spec[side] = c
            P, (fl, fh), (dl, dh) = pad(arr, ax, dx, spec[lo_side], spec[hi_side])
            padded[axis][name] = P
            traces[lo_side][name] = _face_shape(fl, dim, axis)
            traces[hi_side][name] = _face_shape(fh, dim, axis)
            if name == "rho":
                dnorm[lo_side] = _face_shape(dl, dim, axis)
                dnorm[hi_side] = _face_shape(dh, dim, axis)

    for side in grid.sides:
        tr = traces[side]
        tr["aux"] = free[side]["aux"]
        tr["m"] = model.momentum(tr["u"], tr["rho"], tr["aux"])
        tr["drho_dn"] = dnorm[side]
        tr["grid"] = grid

    aux_pad = [model.aux(grid.mesh(pad_axis=a), t) for a in range(dim)]
    aux = model.aux(grid.mesh(), t)

    # fluxes from the traces
    fluxes = {}
    patch_fluxes = {}
    for side in grid.sides:
        tr = traces[side]
        nf = grid.nfaces(side)
        side_fv = FluxValues(
            J=np.zeros((dim, nf)),
            j_rho=np.zeros((model.ncomp, nf)),
            j_s=np.zeros(nf),
            j_adv=None if "adv" not in tr else np.zeros_like(tr["adv"]),
        )
        for patch in grid.patches_on(side):
            sl = slice(patch.start, patch.stop)
            ptr = _slice_traces(tr, sl)
            ptr["grid"] = grid
            fv = evaluate_fluxes(closures[patch.name], model, ptr, t, grid)
            patch_fluxes[patch.name] = fv
            side_fv.J[..., sl] = fv.J
            side_fv.j_rho[..., sl] = fv.j_rho
            side_fv.j_s[..., sl] = fv.j_s
            if side_fv.j_adv is not None and fv.j_adv is not None:
                side_fv.j_adv[..., sl] = fv.j_adv
        fluxes[side] = side_fv

    prep = Prepared(grid, t, padded, aux_pad, aux, traces, fluxes, patch_fluxes)
    prep.residuals = boundary_residuals(model, prep, closures)
    return prep


def _slice_traces(tr, sl):
    out = {}
    for k, v in tr.items():
        if k == "aux":
            out[k] = {a: np.asarray(b)[..., sl] for a, b in v.items()}
        elif k == "grid":
            out[k] = v
        elif v is not None:
            out[k] = np.asarray(v)[..., sl]
    return out


def boundary_residuals(model, prep, closures=None):
    """Max |row| over faces for each boundary row, using traces and fluxes."""
    from .sources import stress_normal

    res = {"mass": 0.0, "entropy": 0.0, "momentum": 0.0}
    if model.korteweg:
        res["korteweg"] = 0.0
    grid = prep.grid
    for side in grid.sides:
        axis, sign = SIDES[side]
        tr = prep.traces[side]
        fv = prep.fluxes[side]
        un = sign * tr["u"][axis]
        res["mass"] = max(res["mass"], float(np.max(np.abs(tr["rho"] * un + fv.j_rho))))
        res["entropy"] = max(res["entropy"], float(np.max(np.abs(tr["s"] * un + fv.j_s))))
        s_adv, s_ext = stress_normal(model, tr, axis, sign)
        row = un * tr["m"] + fv.J + s_adv - s_ext
        res["momentum"] = max(res["momentum"], float(np.max(np.abs(row))))
        if model.korteweg:
            res["korteweg"] = max(res["korteweg"], float(np.max(np.abs(tr["drho_dn"]))))
    return res


def patch_traces(model, state, closures, patch_name, t=None):
    """Face traces on one patch after the ghost fill."""
    prep = apply_boundary_conditions(model, state, closures, t)
    patch = state.grid.patches[patch_name]
    tr = _slice_traces(prep.traces[patch.side], slice(patch.start, patch.stop))
    tr["grid"] = state.grid
    return tr


# ---------------------------------------------------------------------------
# Tendencies


def _D(prep, arr, axis):
    grid = prep.grid
    return cdiff(arr, _arr_axis(arr, grid.dim, axis), grid.spacing[axis])


def _grad_free(values, grid):
    """Gradient of cell data with free (extrapolated) ghosts, stacked on axis 0."""
    out = []
    for a in range(grid.dim):
        ax = _arr_axis(values, grid.dim, a)
        P, _, _ = pad(values, ax, grid.spacing[a])
        out.append(cdiff(P, ax, grid.spacing[a]))
    return np.stack(out)


def _flux_div(prep, name, k=None):
    """Conservative divergence of (q u) for q = rho_k or s."""
    grid = prep.grid
    dim = grid.dim
    total = 0.0
    for a in range(dim):
        P = prep.padded[a]
        q = P[name] if k is None else P[name][k]
        F = q * P["u"][a]
        sides = [s for s in grid.sides if SIDES[s][0] == a]
        lo = [s for s in sides if SIDES[s][1] < 0][0]
        hi = [s for s in sides if SIDES[s][1] > 0][0]
        faces = []
        for s in (lo, hi):
            tr = prep.traces[s]
            qb = tr[name] if k is None else tr[name][k]
            faces.append(_to_side(qb * tr["u"][a], dim))
        total = total + face_flux_divergence(F, _arr_axis(F, dim, a), grid.spacing[a], faces[0], faces[1])
    return total


def laplacian_ghosted(prep, q_name="rho", k=0):
    """sum_a d_a d_a q using both ghost layers."""
    grid = prep.grid
    out = 0.0
    for a in range(grid.dim):
        P = prep.padded[a][q_name][k]
        ax = _arr_axis(P, grid.dim, a)
        g = cdiff(P, ax, grid.spacing[a], ext=1)
        n = g.shape[ax]
        up = np.take(g, np.arange(2, n), axis=ax)
        dn = np.take(g, np.arange(0, n - 2), axis=ax)
        out = out + (up - dn) / (2 * grid.spacing[a])
    return out


def grad_rho_ghosted(prep, k=0):
    grid = prep.grid
    return np.stack([_D(prep, prep.padded[a]["rho"][k], a) for a in range(grid.dim)])


def cell_state(prep):
    """Unpadded primitives recovered from the padded arrays."""
    from .grid import interior_of

    grid = prep.grid
    P = prep.padded[0]
    out = {}
    for name, arr in P.items():
        out[name] = interior_of(arr, _arr_axis(arr, grid.dim, 0))
    return out


def momentum_tendency(model, prep, bulk, u_field=None):
    """dm/dt = -Lie_u m + sum_k rho_k grad(dl/drho_k) + s grad(dl/ds) + advected terms + b + div sigma_ext.

    ``u_field`` (cells) overrides the advecting velocity; the Hamiltonian
    path passes dh/dm here, which equals u.
    """
    grid = prep.grid
    dim = grid.dim
    cs = cell_state(prep)
    u, rho, s = cs["u"], cs["rho"], cs["s"]
    if u_field is not None:
        u = u_field
    grad_u = np.empty((dim, dim) + grid.shape)
    grad_m = []
    grad_lr = []
    grad_ls = []
    for a in range(dim):
        P, aux = prep.padded[a], prep.aux_pad[a]
        for d in range(dim):
            grad_u[a, d] = _D(prep, P["u"][d], a)
        m_a = model.momentum(P["u"], P["rho"], aux)
        grad_m.append(_D(prep, m_a, a))
        vd = model.derivs(P["u"], P["rho"], P["s"], aux, P.get("adv"))
        grad_lr.append(_D(prep, vd.dl_drho, a))
        grad_ls.append(_D(prep, vd.dl_ds, a))
    grad_m = np.stack(grad_m)
    m = model.momentum(u, rho, prep.aux)
    lie = lie_from_jets(u, grad_u, m, grad_m, 0, 1, "density", dim)
    dm = -lie
    for i in range(dim):
        dm[i] = dm[i] + np.sum(rho * grad_lr[i], axis=0) + s * grad_ls[i]
    if model.korteweg:
        # potential dl/drho - div(dl/dgrad rho) = dl/drho + lambda lap(rho)
        lap = laplacian_ghosted(prep)
        g = _grad_free(model.lam * lap, grid)
        rt = np.sum(rho, axis=0)
        for i in range(dim):
            dm[i] = dm[i] + rt * g[i]
    if model.has_adv:
        dm = dm + advected_force(model, prep, cs["adv"])
    if model.stress is not None:
        for d in range(dim):
            dm[d] = dm[d] + sum(_D(prep, prep.aux_pad[a]["sigma"][a, d], a) for a in range(dim))
    return dm + bulk.b


def advected_force(model, prep, adv):
    """pi : grad(dl/dpi) - div sigma (same form for tensor fields with their sigma)."""
    grid = prep.grid
    dim = grid.dim
    nidx = sum(model.adv_rank)
    out = np.zeros((dim,) + grid.shape)
    for a in range(dim):
        P = prep.padded[a]
        _, dea = model.adv_energy(P["adv"])
        alpha = -dea
        galpha = _D(prep, alpha, a)
        out[a] = out[a] + full_contract(adv, galpha, nidx)
        sig = advected_stress(model, P["adv"])
        for d in range(dim):
            out[d] = out[d] - _D(prep, sig[a, d], a)
    return out


def advected_tendency(model, prep, bulk, adv):
    grid = prep.grid
    dim = grid.dim
    if model.base == "mhd":
        # dB/dt = -curl(B x u) + theta_B, curl of the out-of-plane scalar w
        w_x = cross_planar(prep.padded[0]["adv"], prep.padded[0]["u"])
        w_y = cross_planar(prep.padded[1]["adv"], prep.padded[1]["u"])
        curl = np.stack([_D(prep, w_y, 1), -_D(prep, w_x, 0)])
        return -curl + bulk.theta_adv
    p, q = model.adv_rank
    cs = cell_state(prep)
    grad_u = np.empty((dim, dim) + grid.shape)
    grad_t = []
    for a in range(dim):
        P = prep.padded[a]
        for d in range(dim):
            grad_u[a, d] = _D(prep, P["u"][d], a)
        grad_t.append(_D(prep, P["adv"], a))
    lie = lie_from_jets(cs["u"], grad_u, adv, np.stack(grad_t), p, q, model.adv_kind, dim)
    return -lie + bulk.theta_adv


def velocity_form_tendency(model, prep, bulk):
    """Velocity-form momentum equation for the Euler-type families.

    rho (du/dt + u.grad u + 2 omega x u) = -grad p - rho grad phi + b - theta_rho (u + R)
    and, for shallow water, h (du/dt + u.grad u + 2 omega x u) = -g h grad(h + Z) + b - theta_h (u + R).
    """
    grid = prep.grid
    dim = grid.dim
    if model.base not in ("euler", "euler_rotating_gravity", "shallow_water_rotating"):
        raise ValueError(f"velocity form not available for {model.base}")
    cs = cell_state(prep)
    u, rho = cs["u"], cs["rho"]
    rt = np.sum(rho, axis=0)
    aux = prep.aux
    du = np.zeros_like(u)
    for a in range(dim):
        P, ax = prep.padded[a], prep.aux_pad[a]
        for d in range(dim):
            du[d] = du[d] - u[a] * _D(prep, P["u"][d], a)
        rt_a = np.sum(P["rho"], axis=0)
        if model.base == "shallow_water_rotating":
            du[a] = du[a] - model.g_const * _D(prep, rt_a + ax["Z"], a)
        else:
            du[a] = du[a] - _D(prep, pressure(model.eq, rt_a, P["s"]), a) / rt
            du[a] = du[a] - _D(prep, ax["phi"], a)
    if dim == 2:
        two_omega = curl2d(Field(grid, aux["R"], (0, 1))).values
        du[0] = du[0] + two_omega * u[1]
        du[1] = du[1] - two_omega * u[0]
    theta = np.sum(bulk.theta_rho, axis=0)
    du = du + (bulk.b - theta * (u + aux["R"])) / rt
    if model.stress is not None:
        for d in range(dim):
            du[d] = du[d] + sum(_D(prep, prep.aux_pad[a]["sigma"][a, d], a) for a in range(dim)) / rt
    return du


def tendency_from_prepared(model, prep, bulk, form="momentum"):
    """All tendencies at the prepared (ghost-filled) state."""
    cs = cell_state(prep)
    drho = np.stack([-_flux_div(prep, "rho", k) for k in range(model.ncomp)]) + bulk.theta_rho
    ds = -_flux_div(prep, "s") + bulk.theta_s
    dadv = advected_tendency(model, prep, bulk, cs["adv"]) if model.has_adv else None
    rt = np.sum(cs["rho"], axis=0)
    shift = cs["u"] + prep.aux["R"]
    if form == "velocity":
        du = velocity_form_tendency(model, prep, bulk)
        dm = rt * du + shift * np.sum(drho, axis=0)
    elif form == "momentum":
        dm = momentum_tendency(model, prep, bulk)
        du = (dm - shift * np.sum(drho, axis=0)) / rt
    else:
        raise ValueError(f"unknown form {form!r}")
    return Tendency(du=du, dm=dm, drho=drho, ds=ds, dadv=dadv).check()


def interior_tendency(model, state, bulk=None, closures=None, form="momentum", sources=None):
    """Tendencies of (u, m, rho_k, s, tensor) at ``state``.

    ``bulk`` is a BulkFields (realised sources); ``sources`` a BulkSources
    (or SourceSet) to realise at state.t.  Patches without a closure are
    free_open.
    """
    src, closures = split_sources(sources, closures)
    if bulk is None:
        bulk = evaluate_bulk(src, state.grid, model, state.t)
    prep = apply_boundary_conditions(model, state, closures)
    return tendency_from_prepared(model, prep, bulk, form)


# ---------------------------------------------------------------------------
# Time stepping


def cfl_limit(model, state, cfl=0.5):
    dx = min(state.grid.spacing)
    speed = model.max_speed(state.u, state.rho, state.s, state.adv, dx)
    return cfl * dx / speed


def _advance(model, state, tend, h):
    adv = None if state.adv is None else state.adv + h * tend.dadv
    return State(
        state.grid,
        state.u + h * tend.du,
        state.rho + h * tend.drho,
        state.s + h * tend.ds,
        adv,
        state.t + h,
    )


def step(model, state, sources=None, closures=None, dt=None, scheme="rk4", cfl=0.5,
         form="momentum", strict_cfl=True):
    """Advance one step with the classical four-stage Runge-Kutta scheme.

    Boundary conditions are re-imposed at every stage.  ``sources`` is a
    BulkSources evaluated at each stage time.
    """
    sources, closures = split_sources(sources, closures)
    if scheme != "rk4":
        raise ValueError(f"unknown scheme {scheme!r}")
    limit = cfl_limit(model, state, cfl)
    if dt is None:
        dt = limit
    if dt > limit * (1 + 1e-12):
        msg = f"dt={dt:.3e} exceeds the CFL bound {limit:.3e}"
        if strict_cfl:
            raise CFLError(msg)
        warnings.warn(msg)

    def rhs(st):
        bulk = evaluate_bulk(sources, st.grid, model, st.t)
        return interior_tendency(model, st, bulk, closures, form)

    try:
        k1 = rhs(state)
        k2 = rhs(_advance(model, state, k1, dt / 2))
        k3 = rhs(_advance(model, state, k2, dt / 2))
        k4 = rhs(_advance(model, state, k3, dt))
    except FloatingPointError as exc:
        raise NumericalAbort(str(exc)) from exc
    comb = Tendency(
        du=(k1.du + 2 * k2.du + 2 * k3.du + k4.du) / 6,
        dm=(k1.dm + 2 * k2.dm + 2 * k3.dm + k4.dm) / 6,
        drho=(k1.drho + 2 * k2.drho + 2 * k3.drho + k4.drho) / 6,
        ds=(k1.ds + 2 * k2.ds + 2 * k3.ds + k4.ds) / 6,
        dadv=None if k1.dadv is None else (k1.dadv + 2 * k2.dadv + 2 * k3.dadv + k4.dadv) / 6,
    )
    try:
        new = _advance(model, state, comb, dt)
    except FloatingPointError as exc:
        raise NumericalAbort(str(exc)) from exc
    return new
