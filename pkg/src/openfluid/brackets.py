"""Functionals of (m, rho_k, s), the Lie-Poisson bracket and its split.

For f = int f(m, rho, s) dx and h the Hamiltonian,

    {f, h}_LP = int m.[f_m, h_m] + rho (h_m.grad f_rho - f_m.grad h_rho)
                    + s (h_m.grad f_s - f_m.grad h_s) dx

with [X, Y] = Y.grad X - X.grad Y.  Integrating by parts so that only the
partials of f remain gives

    {f, h}_bulk = -int (Lie_{h_m} m + rho grad h_rho + s grad h_s).f_m
                       + div(rho h_m) f_rho + div(s h_m) f_s dx
    {f, h}_boundary = oint (h_m.n) (m.f_m + rho f_rho + s f_s) da

The single-expression value is antisymmetric cell by cell.  The split is
evaluated with the operators of the dynamics module, so bulk + boundary
matches the single expression only up to the discretisation error.
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import Tendency, _D, apply_boundary_conditions, tendency_from_prepared, step
from .grid import SIDES, _grad_array, face_flux_divergence, lie_from_jets, pad, cdiff
from .sources import FluxClosure, evaluate_bulk, split_sources
from .thermo import pressure


class BracketError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Partials:
    """Pointwise partial derivatives of a functional density."""

    dm: np.ndarray
    drho: np.ndarray
    ds: np.ndarray


@dataclass(frozen=True, eq=False)
class DiscreteFunctional:
    """f(state) = sum over cells of density(m, rho, s, aux) times the cell volume.

    ``partials`` maps (m, rho, s, aux) to Partials; without it the partials
    are taken by central differences of ``density``.
    """

    name: str
    model: object
    density: object
    partials: object = None
    fd_step: float = 1e-6

    def fields(self, state):
        aux = self.model.aux(state.grid.mesh(), state.t)
        m = self.model.momentum(state.u, state.rho, aux)
        return m, state.rho, state.s, aux

    def value(self, state):
        m, rho, s, aux = self.fields(state)
        return float(np.sum(self.density(m, rho, s, aux)) * state.grid.cell_volume)

    def derivs(self, m, rho, s, aux):
        if self.partials is not None:
            return self.partials(m, rho, s, aux)
        return fd_partials(self.density, m, rho, s, aux, self.fd_step)


def fd_partials(density, m, rho, s, aux, rel=1e-6):
    """Central-difference partials with step rel * max(|value|, 1)."""
    m, rho, s = (np.asarray(a, float) for a in (m, rho, s))

    def d_wrt(arr, idx, put):
        h = rel * np.maximum(np.abs(arr[idx]), 1.0)
        up, dn = arr.copy(), arr.copy()
        up[idx] = up[idx] + h
        dn[idx] = dn[idx] - h
        fp, fm_ = put(up), put(dn)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm_))):
            raise BracketError("functional is not differentiable at this state")
        return (fp - fm_) / (2 * h)

    dm = np.stack([d_wrt(m, i, lambda a: density(a, rho, s, aux)) for i in range(m.shape[0])])
    drho = np.stack([d_wrt(rho, k, lambda a: density(m, a, s, aux)) for k in range(rho.shape[0])])
    ds = d_wrt(s[None], 0, lambda a: density(m, rho, a[0], aux))
    return Partials(dm, drho, ds)


def _zeros_like_partials(m, rho, s):
    return np.zeros_like(m), np.zeros_like(rho), np.zeros_like(s)


def _check_model(model):
    if model.has_adv or model.korteweg or model.stress is not None:
        raise BracketError(
            f"the (m, rho, s) bracket does not cover model {model.family!r} "
            "(advected tensors, gradient terms or external stress)"
        )


def catalogue(model):
    """mass, entropy, momentum_i, kinetic and hamiltonian functionals."""
    _check_model(model)
    dim = model.dim
    out = {}

    def mass(m, rho, s, aux):
        return np.sum(rho, axis=0)

    def mass_p(m, rho, s, aux):
        zm, zr, zs = _zeros_like_partials(m, rho, s)
        return Partials(zm, zr + 1.0, zs)

    out["mass"] = DiscreteFunctional("mass", model, mass, mass_p)

    def ent_p(m, rho, s, aux):
        zm, zr, zs = _zeros_like_partials(m, rho, s)
        return Partials(zm, zr, zs + 1.0)

    out["entropy"] = DiscreteFunctional("entropy", model, lambda m, rho, s, aux: np.asarray(s, float), ent_p)

    for i in range(dim):
        def mom(m, rho, s, aux, i=i):
            return m[i]

        def mom_p(m, rho, s, aux, i=i):
            zm, zr, zs = _zeros_like_partials(m, rho, s)
            zm[i] = 1.0
            return Partials(zm, zr, zs)

        out[f"momentum_{i}"] = DiscreteFunctional(f"momentum_{i}", model, mom, mom_p)

    def kin(m, rho, s, aux):
        return 0.5 * np.sum(m * m, axis=0) / np.sum(rho, axis=0)

    def kin_p(m, rho, s, aux):
        rt = np.sum(rho, axis=0)
        zm, zr, zs = _zeros_like_partials(m, rho, s)
        return Partials(m / rt, zr - 0.5 * np.sum(m * m, axis=0) / rt ** 2, zs)

    out["kinetic"] = DiscreteFunctional("kinetic", model, kin, kin_p)
    out["hamiltonian"] = hamiltonian_functional(model)
    return out


def hamiltonian_functional(model):
    """h(m, rho, s) = m.u - l with dh/dm = u, dh/drho = -dl/drho, dh/ds = -dl/ds."""
    _check_model(model)

    def dens(m, rho, s, aux):
        return model.hamiltonian(m, rho, s, aux)[0]

    def parts(m, rho, s, aux):
        u = model.velocity(m, rho, aux)
        vd = model.derivs(u, rho, s, aux)
        return Partials(u, -vd.dl_drho, -np.broadcast_to(vd.dl_ds, np.shape(s)))

    return DiscreteFunctional("hamiltonian", model, dens, parts)


def functional_derivative(f, state):
    """Pointwise partials of the density of ``f`` at the cells of ``state``."""
    m, rho, s, aux = f.fields(state)
    return f.derivs(m, rho, s, aux)


# ---------------------------------------------------------------------------
# The bracket


@dataclass
class BracketValue:
    bulk: float
    boundary: float
    lp: float = None

    @property
    def total(self):
        return self.bulk + self.boundary


def _prepare(model, state, closures=None):
    return apply_boundary_conditions(model, state, closures)


def _partials_padded(h, model, prep, a):
    P, aux = prep.padded[a], prep.aux_pad[a]
    m = model.momentum(P["u"], P["rho"], aux)
    return m, h.derivs(m, P["rho"], P["s"], aux)


def _trace_partials(f, model, tr):
    return f.derivs(tr["m"], tr["rho"], tr["s"], tr["aux"])


def lp_density(f, h, state):
    """Cellwise integrand of the single-expression bracket."""
    grid = state.grid
    m, rho, s, aux = f.fields(state)
    F = f.derivs(m, rho, s, aux)
    H = h.derivs(m, rho, s, aux)
    G = lambda a: _grad_array(np.asarray(a, float), grid)
    gFm, gHm = G(F.dm), G(H.dm)
    dim = grid.dim
    # [f_m, h_m] = h_m.grad f_m - f_m.grad h_m
    br = sum(H.dm[c] * gFm[c] - F.dm[c] * gHm[c] for c in range(dim))
    out = np.sum(m * br, axis=0)
    gFr, gHr = G(F.drho), G(H.drho)
    out = out + np.sum(rho * sum(H.dm[c] * gFr[c] - F.dm[c] * gHr[c] for c in range(dim)), axis=0)
    gFs, gHs = G(F.ds), G(H.ds)
    out = out + s * sum(H.dm[c] * gFs[c] - F.dm[c] * gHs[c] for c in range(dim))
    return out


def bulk_operator(h, model, prep):
    """(Lie_{h_m} m + rho grad h_rho + s grad h_s, div(rho_k h_m), div(s h_m)) at the cells.

    Uses the ghost-filled arrays of ``prep``; the divergences are in flux form
    with boundary faces carrying the trace values.
    """
    grid = prep.grid
    dim = grid.dim
    jets = [_partials_padded(h, model, prep, a) for a in range(dim)]
    from .dynamics import cell_state

    cs = cell_state(prep)
    m_c = model.momentum(cs["u"], cs["rho"], prep.aux)
    Hc = h.derivs(m_c, cs["rho"], cs["s"], prep.aux)
    grad_hm = np.empty((dim, dim) + grid.shape)
    grad_m = []
    force = np.zeros((dim,) + grid.shape)
    for a in range(dim):
        m_a, H_a = jets[a]
        for d in range(dim):
            grad_hm[a, d] = _D(prep, H_a.dm[d], a)
        grad_m.append(_D(prep, m_a, a))
        force[a] = force[a] + np.sum(cs["rho"] * _D(prep, H_a.drho, a), axis=0) + cs["s"] * _D(prep, H_a.ds, a)
    force = force + lie_from_jets(Hc.dm, grad_hm, m_c, np.stack(grad_m), 0, 1, "density", dim)

    def fdiv(q_name, k=None):
        total = 0.0
        for a in range(dim):
            P = prep.padded[a]
            _, H_a = jets[a]
            q = P[q_name] if k is None else P[q_name][k]
            F = q * H_a.dm[a]
            sides = [s for s in grid.sides if SIDES[s][0] == a]
            faces = []
            for side in sorted(sides, key=lambda s: SIDES[s][1]):
                tr = prep.traces[side]
                Hb = _trace_partials(h, model, tr)
                qb = tr[q_name] if k is None else tr[q_name][k]
                v = qb * Hb.dm[a]
                faces.append(v if dim == 2 else v[..., 0])
            ax = F.ndim - dim + a
            total = total + face_flux_divergence(F, ax, grid.spacing[a], faces[0], faces[1])
        return total

    div_rho = np.stack([fdiv("rho", k) for k in range(model.ncomp)])
    div_s = fdiv("s")
    return force, div_rho, div_s


def boundary_bracket_faces(f, h, model, prep):
    """Per-side face values of (h_m.n)(m.f_m + rho f_rho + s f_s)."""
    out = {}
    for side in prep.grid.sides:
        axis, sign = SIDES[side]
        tr = prep.traces[side]
        F = _trace_partials(f, model, tr)
        H = _trace_partials(h, model, tr)
        hn = sign * H.dm[axis]
        out[side] = hn * (
            np.sum(tr["m"] * F.dm, axis=0) + np.sum(tr["rho"] * F.drho, axis=0) + tr["s"] * F.ds
        )
    return out


def _bint(grid, faces):
    return float(sum(np.sum(v) * grid.face_area(side) for side, v in faces.items()))


def lie_poisson_bracket(f, h, state, closures=None, prep=None):
    """Bulk and boundary parts of {f, h}, plus the single-expression value."""
    model = f.model
    if h.model is not model and h.model.family != model.family:
        raise BracketError("functionals belong to different models")
    grid = state.grid
    prep = prep if prep is not None else _prepare(model, state, closures)
    if prep.grid != grid:
        raise BracketError("grid mismatch")
    m, rho, s, aux = f.fields(state)
    F = f.derivs(m, rho, s, aux)
    force, div_rho, div_s = bulk_operator(h, model, prep)
    bulk = -np.sum(force * F.dm, axis=0) - np.sum(div_rho * F.drho, axis=0) - div_s * F.ds
    bulk = float(np.sum(bulk) * grid.cell_volume)
    boundary = _bint(grid, boundary_bracket_faces(f, h, model, prep))
    lp = float(np.sum(lp_density(f, h, state)) * grid.cell_volume)
    return BracketValue(bulk, boundary, lp)


# ---------------------------------------------------------------------------
# Evolution identity


@dataclass
class EvolutionRate:
    name: str
    d_dt: float
    lp: float
    bulk_sources: float
    boundary_sources: float
    split: BracketValue = None

    @property
    def rate(self):
        """R(f) = {f,h}_LP + bulk and boundary source contributions."""
        return self.lp + self.bulk_sources + self.boundary_sources

    @property
    def residual(self):
        return self.d_dt - self.rate

    @property
    def split_residual(self):
        return self.d_dt - self.split.total - self.bulk_sources - self.boundary_sources


def chain_rule_rate(f, model, state, tend):
    m, rho, s, aux = f.fields(state)
    F = f.derivs(m, rho, s, aux)
    val = np.sum(F.dm * tend.dm, axis=0) + np.sum(F.drho * tend.drho, axis=0) + F.ds * tend.ds
    return float(np.sum(val) * state.grid.cell_volume)


def extended_evolution_rate(f, model, state, sources=None, closures=None):
    """d/dt f through the dynamics tendency and the right-hand side R(f)."""
    if f.model is not model and f.model.family != model.family:
        raise BracketError("functional and model do not match")
    _check_model(model)
    src, closures = split_sources(sources, closures)
    grid = state.grid
    prep = _prepare(model, state, closures)
    bulk = evaluate_bulk(src, grid, model, state.t)
    tend = tendency_from_prepared(model, prep, bulk)
    h = hamiltonian_functional(model)
    br = lie_poisson_bracket(f, h, state, prep=prep)
    m, rho, s, aux = f.fields(state)
    F = f.derivs(m, rho, s, aux)
    bsrc = np.sum(bulk.b * F.dm, axis=0) + np.sum(bulk.theta_rho * F.drho, axis=0) + bulk.theta_s * F.ds
    bsrc = float(np.sum(bsrc) * grid.cell_volume)
    faces = {}
    for side in grid.sides:
        tr, fv = prep.traces[side], prep.fluxes[side]
        Fb = _trace_partials(f, model, tr)
        faces[side] = np.sum(fv.J * Fb.dm, axis=0) + np.sum(fv.j_rho * Fb.drho, axis=0) + fv.j_s * Fb.ds
    return EvolutionRate(f.name, chain_rule_rate(f, model, state, tend), br.lp, bsrc, _bint(grid, faces), br)


def evolution_rate_time_fd(f, model, state, sources=None, closures=None, dt=None):
    """Secondary oracle: central time difference of f along two RK4 steps."""
    from .dynamics import cfl_limit

    dt = dt if dt is not None else 0.05 * cfl_limit(model, state)
    fwd = step(model, state, sources, closures, dt)
    bwd = step(model, state, sources, closures, -dt, strict_cfl=False)
    return (f.value(fwd) - f.value(bwd)) / (2 * dt)


def momentum_bracket_oracle(model, state, i, closures=None):
    """oint (h - m.h_m - rho h_rho - s h_s) n_i da, the value of {m_i, h}_LP.

    The volume integral of d_i(...) is evaluated through the boundary traces.
    For Euler the integrand reduces to -p.
    """
    h = hamiltonian_functional(model)
    prep = _prepare(model, state, closures)
    total = 0.0
    for side in state.grid.sides:
        axis, sign = SIDES[side]
        if axis != i:
            continue
        tr = prep.traces[side]
        H = h.derivs(tr["m"], tr["rho"], tr["s"], tr["aux"])
        dens = h.density(tr["m"], tr["rho"], tr["s"], tr["aux"])
        q = dens - np.sum(tr["m"] * H.dm, axis=0) - np.sum(tr["rho"] * H.drho, axis=0) - tr["s"] * H.ds
        total += float(np.sum(sign * q) * state.grid.face_area(side))
    return total


# ---------------------------------------------------------------------------
# Particular cases


def case_a_check(model, state, closures=None, functionals=None):
    """Zero-flux case: BC rows on the traces and the boundary bracket.

    Returns (max |row| of (h_m.n) m, rho h_m.n, s h_m.n on the traces,
    max |{f,h}_boundary| over the functionals).  Both vanish together.
    """
    _check_model(model)
    prep = _prepare(model, state, closures)
    h = hamiltonian_functional(model)
    fs = functionals or catalogue(model)
    rows = 0.0
    for side in state.grid.sides:
        axis, sign = SIDES[side]
        tr = prep.traces[side]
        hn = sign * h.derivs(tr["m"], tr["rho"], tr["s"], tr["aux"]).dm[axis]
        rows = max(rows, float(np.max(np.abs(hn * tr["m"]))), float(np.max(np.abs(tr["rho"] * hn))),
                   float(np.max(np.abs(tr["s"] * hn))))
    worst = 0.0
    for f in fs.values():
        worst = max(worst, abs(_bint(state.grid, boundary_bracket_faces(f, h, model, prep))))
    return rows, worst


def case_b_cancellation(model, state, functionals=None):
    """Free-open fluxes against the boundary bracket, face by face.

    Returns max over faces and functionals of
    |J.f_m + j_rho f_rho + j_s f_s + (h_m.n)(m.f_m + rho f_rho + s f_s)|.
    """
    _check_model(model)
    grid = state.grid
    closures = {name: FluxClosure(p, "free_open", {}) for name, p in grid.patches.items()}
    prep = _prepare(model, state, closures)
    h = hamiltonian_functional(model)
    fs = functionals or catalogue(model)
    worst = 0.0
    for f in fs.values():
        bb = boundary_bracket_faces(f, h, model, prep)
        for side in grid.sides:
            tr, fv = prep.traces[side], prep.fluxes[side]
            Fb = _trace_partials(f, model, tr)
            contrib = np.sum(fv.J * Fb.dm, axis=0) + np.sum(fv.j_rho * Fb.drho, axis=0) + fv.j_s * Fb.ds
            worst = max(worst, float(np.max(np.abs(contrib + bb[side]))))
    return worst


# ---------------------------------------------------------------------------
# Momentum-form Euler system


def euler_m_tendency(model, state, sources=None):
    """Tendencies of the momentum-form Euler system in (m, rho, s).

    dm/dt = -div(m (x) m / rho) - grad p + b, drho/dt = -div m + theta_rho,
    ds/dt = -div(s m / rho) + theta_s, with centred differences on freely
    extrapolated ghosts.  This is a discretisation independent of the
    velocity-form and Lie-derivative paths.
    """
    if model.base != "euler" or model.ncomp != 1 or model.stress is not None:
        raise BracketError("the momentum-form system is stated for the single-component Euler model")
    src, _ = split_sources(sources)
    grid = state.grid
    dim = grid.dim
    bulk = evaluate_bulk(src, grid, model, state.t)
    rho = state.rho[0]
    m = rho * state.u
    s = state.s

    def D(arr, a):
        ax = arr.ndim - dim + a
        P, _, _ = pad(arr, ax, grid.spacing[a])
        return cdiff(P, ax, grid.spacing[a])

    dm = np.zeros_like(m)
    drho = np.zeros_like(rho)
    ds = np.zeros_like(s)
    p = pressure(model.eq, rho, s)
    for a in range(dim):
        flux = m * m[a] / rho
        dm = dm - D(flux, a)
        dm[a] = dm[a] - D(p, a)
        drho = drho - D(m[a], a)
        ds = ds - D(s * m[a] / rho, a)
    dm = dm + bulk.b
    drho = drho + bulk.theta_rho[0]
    ds = ds + bulk.theta_s
    du = (dm - state.u * drho) / rho
    return Tendency(du=du, dm=dm, drho=drho[None], ds=ds).check()
