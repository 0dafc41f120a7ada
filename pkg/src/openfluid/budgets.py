"""Global balance laws: mass, entropy, species, total energy and its splits.

Each report holds the time derivative of a global integral (chain-ruled
through the discrete tendencies, so no time error enters), the volume
integral of its bulk-source expression and the boundary integral of its
flux expression.  Boundary expressions are evaluated on the face traces
left by the ghost fill together with the closure fluxes.
"""

from dataclasses import dataclass, field
import itertools

import numpy as np

from .dynamics import (
    _D,
    apply_boundary_conditions,
    grad_rho_ghosted,
    laplacian_ghosted,
    tendency_from_prepared,
)
from .grid import SIDES, cdiff, full_contract, pad, side_ghosts
from .sources import evaluate_bulk, split_sources, stress_normal
from .thermo import thermo_quantities

ATOL = 1e-8
TOL_C = 50.0


class BudgetError(ValueError):
    pass


@dataclass
class BudgetReport:
    quantity: str
    d_dt: float
    bulk: float
    boundary: float
    tol: float = ATOL

    @property
    def residual(self):
        return self.d_dt - self.bulk - self.boundary

    @property
    def passed(self):
        return bool(np.isfinite(self.residual) and abs(self.residual) <= self.tol)

    @property
    def scale(self):
        return max(abs(self.d_dt), abs(self.bulk), abs(self.boundary), 1.0)

    def row(self):
        return {
            "quantity": self.quantity,
            "d_dt": self.d_dt,
            "bulk": self.bulk,
            "boundary": self.boundary,
            "residual": self.residual,
            "tol": self.tol,
            "pass": self.passed,
        }


def tolerance(grid, scale, C=TOL_C, atol=ATOL):
    """Absolute floor plus a second-order relative part."""
    h = max(grid.spacing)
    return atol + C * h * h * scale


@dataclass
class BudgetContext:
    """Everything a budget needs at one state, computed once."""

    model: object
    state: object
    prep: object
    bulk: object
    tend: object

    @property
    def grid(self):
        return self.state.grid

    def vol(self, arr):
        return float(np.sum(arr) * self.grid.cell_volume)

    def bnd(self, fn):
        """sum over sides of da * fn(traces, fluxes, axis, sign)."""
        total = 0.0
        for side in self.grid.sides:
            axis, sign = SIDES[side]
            vals = fn(self.prep.traces[side], self.prep.fluxes[side], axis, sign)
            total += float(np.sum(vals) * self.grid.face_area(side))
        return total


def budget_context(model, state, sources=None, closures=None, form="momentum"):
    src, closures = split_sources(sources, closures)
    prep = apply_boundary_conditions(model, state, closures)
    bulk = evaluate_bulk(src, state.grid, model, state.t)
    tend = tendency_from_prepared(model, prep, bulk, form)
    return BudgetContext(model, state, prep, bulk, tend)


def _report(ctx, name, d_dt, bulk, boundary, C=TOL_C):
    scale = max(abs(d_dt), abs(bulk), abs(boundary), 1.0)
    return BudgetReport(name, d_dt, bulk, boundary, tolerance(ctx.grid, scale, C))


def _ctx(model, state, sources, closures, form, ctx):
    return ctx if ctx is not None else budget_context(model, state, sources, closures, form)


# ---------------------------------------------------------------------------
# Mass and entropy


def quantity_budget(kind, model, state, sources=None, closures=None, ctx=None):
    """d/dt of total mass (``mass``), one species (``mass_k``) or entropy.

    The density tendencies are in flux form with boundary fluxes equal to
    the closure fluxes on the traces, so the residual sits at round-off.
    """
    ctx = _ctx(model, state, sources, closures, "momentum", ctx)
    T, B = ctx.tend, ctx.bulk
    if kind == "entropy":
        return _report(ctx, kind, ctx.vol(T.ds), ctx.vol(B.theta_s), ctx.bnd(lambda tr, fv, a, s: fv.j_s))
    if kind == "mass":
        comps = list(range(model.ncomp))
    elif kind.startswith("mass_"):
        try:
            comps = [int(kind.split("_", 1)[1])]
        except ValueError:
            raise BudgetError(f"unknown budget quantity {kind!r}") from None
        if not 0 <= comps[0] < model.ncomp:
            raise BudgetError(f"model has {model.ncomp} components, asked for {kind!r}")
    else:
        raise BudgetError(f"unknown budget quantity {kind!r}")
    return _report(
        ctx,
        kind,
        ctx.vol(T.drho[comps]),
        ctx.vol(B.theta_rho[comps]),
        ctx.bnd(lambda tr, fv, a, s: np.sum(fv.j_rho[comps], axis=0)),
    )


# ---------------------------------------------------------------------------
# Energy


def _trace_of(values, grid, side):
    axis, sign = SIDES[side]
    ax = values.ndim - grid.dim + axis
    _, _, fv, _ = side_ghosts(values, ax, grid.spacing[axis], sign < 0)
    return fv if grid.dim == 2 else fv[..., None]


def _cell_derivs(ctx):
    st, model = ctx.state, ctx.model
    return model.derivs(st.u, st.rho, st.s, ctx.prep.aux, st.adv)


def _potential(ctx):
    """dl/drho_k, with - div(dl/d grad rho) = + lambda lap(rho) for Korteweg."""
    vd = _cell_derivs(ctx)
    P = vd.dl_drho
    if ctx.model.korteweg:
        P = P + ctx.model.lam * laplacian_ghosted(ctx.prep)[None]
    return vd, P


def _grad_neumann(values, grid):
    out = []
    for a in range(grid.dim):
        c = {"normal_deriv": 0.0}
        P, _, _ = pad(values, a, grid.spacing[a], c, c)
        out.append(cdiff(P, a, grid.spacing[a]))
    return np.stack(out)


def _grad_u(ctx):
    grid = ctx.grid
    dim = grid.dim
    g = np.empty((dim, dim) + grid.shape)
    for a in range(dim):
        for d in range(dim):
            g[a, d] = _D(ctx.prep, ctx.prep.padded[a]["u"][d], a)
    return g


def total_energy(model, state, closures=None, prep=None):
    """Discrete total energy; Korteweg uses the ghosted density gradient."""
    grid = state.grid
    prep = prep if prep is not None else apply_boundary_conditions(model, state, closures)
    gr = grad_rho_ghosted(prep) if model.korteweg else None
    e = model.energy(state.u, state.rho, state.s, prep.aux, state.adv, gr)
    return float(np.sum(e) * grid.cell_volume)


def _generic(ctx):
    model, st, T, B = ctx.model, ctx.state, ctx.tend, ctx.bulk
    grid = ctx.grid
    vd, P = _potential(ctx)
    u = st.u
    rate = np.sum(u * T.dm, axis=0) - np.sum(vd.dl_drho * T.drho, axis=0) - vd.dl_ds * T.ds
    bulk = np.sum(B.b * u, axis=0) - np.sum(B.theta_rho * P, axis=0) - B.theta_s * vd.dl_ds
    nidx = sum(model.adv_rank) if model.has_adv else 0
    if model.has_adv:
        rate = rate - full_contract(vd.dl_dadv, T.dadv, nidx)
        bulk = bulk - full_contract(B.theta_adv, vd.dl_dadv, nidx)
    if model.korteweg:
        gr = grad_rho_ghosted(ctx.prep)
        rate = rate + model.lam * np.sum(gr * _grad_neumann(np.sum(T.drho, axis=0), grid), axis=0)
    if model.stress is not None:
        sig = ctx.prep.aux["sigma"]
        bulk = bulk - np.sum(sig * _grad_u(ctx), axis=(0, 1))
    lap = laplacian_ghosted(ctx.prep) if model.korteweg else None

    def boundary(tr, fv, axis, sign):
        side = [s for s, v in SIDES.items() if v == (axis, sign)][0]
        vdb = model.derivs(tr["u"], tr["rho"], tr["s"], tr["aux"], tr.get("adv"))
        Pb = vdb.dl_drho
        if model.korteweg:
            Pb = Pb + model.lam * _trace_of(lap, grid, side)[None]
        out = np.sum(fv.J * tr["u"], axis=0) - np.sum(fv.j_rho * Pb, axis=0) - fv.j_s * vdb.dl_ds
        if model.has_adv:
            out = out - full_contract(fv.j_adv, vdb.dl_dadv, nidx)
        return out

    return ctx.vol(rate), ctx.vol(bulk), ctx.bnd(boundary)


def _specific(ctx, form):
    model, st, T, B = ctx.model, ctx.state, ctx.tend, ctx.bulk
    u = st.u
    rho = np.sum(st.rho, axis=0)
    drho = np.sum(T.drho, axis=0)
    theta = np.sum(B.theta_rho, axis=0)
    aux = ctx.prep.aux
    ke = 0.5 * np.sum(u * u, axis=0)
    rate_k = rho * np.sum(u * T.du, axis=0) + ke * drho
    if form == "shallow_water":
        eta = rho + aux["Z"]
        gE = model.g_const * eta
        rate = rate_k + gE * drho
        bulk = np.sum(B.b * u, axis=0) - theta * (ke + np.sum(aux["R"] * u, axis=0) - gE)

        def boundary(tr, fv, axis, sign):
            ub = tr["u"]
            return np.sum(fv.j_rho, axis=0) * (
                0.5 * np.sum(ub * ub, axis=0) + model.g_const * (np.sum(tr["rho"], axis=0) + tr["aux"]["Z"])
            )

        return ctx.vol(rate), ctx.vol(bulk), ctx.bnd(boundary)

    tq = thermo_quantities(model.eq, rho, st.s)
    if form == "euler":
        rate = rate_k + tq.g * drho + tq.T * T.ds
        bulk = np.sum(B.b * u, axis=0) + theta * (tq.g - ke) + B.theta_s * tq.T

        def boundary(tr, fv, axis, sign):
            tb = thermo_quantities(model.eq, np.sum(tr["rho"], axis=0), tr["s"])
            ub = tr["u"]
            return (
                np.sum(fv.J * ub, axis=0)
                + np.sum(fv.j_rho, axis=0) * (tb.g - 0.5 * np.sum(ub * ub, axis=0))
                + fv.j_s * tb.T
            )

        return ctx.vol(rate), ctx.vol(bulk), ctx.bnd(boundary)

    # rotating with gravity
    phi = aux["phi"]
    rate = rate_k + (tq.g + phi) * drho + tq.T * T.ds
    bulk = (
        np.sum(B.b * u, axis=0)
        - theta * (ke + np.sum(u * aux["R"], axis=0) - tq.g - phi)
        + B.theta_s * tq.T
    )

    def boundary(tr, fv, axis, sign):
        tb = thermo_quantities(model.eq, np.sum(tr["rho"], axis=0), tr["s"])
        ub = tr["u"]
        return np.sum(fv.j_rho, axis=0) * (0.5 * np.sum(ub * ub, axis=0) + tb.h_enth + tr["aux"]["phi"])

    return ctx.vol(rate), ctx.vol(bulk), ctx.bnd(boundary)


_FORM_BASE = {
    "euler": "euler",
    "rotating": "euler_rotating_gravity",
    "shallow_water": "shallow_water_rotating",
}


def energy_budget(model, state, sources=None, form="generic", closures=None, ctx=None,
                  tendency_form="momentum", C=TOL_C):
    """Budget of the total energy e = m.u - l.

    ``form`` selects the bulk and boundary expressions: ``generic`` uses the
    variational derivatives of the model; ``euler``, ``rotating`` and
    ``shallow_water`` use the closed expressions in g, T, h, phi, Z.
    """
    if form != "generic":
        if form not in _FORM_BASE:
            raise BudgetError(f"unknown energy form {form!r}")
        if model.base != _FORM_BASE[form] or model.stress is not None:
            raise BudgetError(f"energy form {form!r} does not match model {model.family!r}")
    ctx = _ctx(model, state, sources, closures, tendency_form, ctx)
    d, b, bd = _generic(ctx) if form == "generic" else _specific(ctx, form)
    return _report(ctx, f"energy_{form}", d, b, bd, C)


def energy_split_budget(model, state, sources=None, closures=None, ctx=None,
                        tendency_form="momentum", C=TOL_C):
    """Kinetic, internal and potential budgets plus the total they sum to.

    The exchange terms (u.grad p, rho u.grad phi, g h u.grad(h+Z)) are put in
    the bulk column of both reports they connect, with opposite signs.
    """
    if model.stress is not None or model.base not in _FORM_BASE.values():
        raise BudgetError(f"energy splits are not available for {model.family!r}")
    ctx = _ctx(model, state, sources, closures, tendency_form, ctx)
    st, T, B, prep = ctx.state, ctx.tend, ctx.bulk, ctx.prep
    grid = ctx.grid
    dim = grid.dim
    u = st.u
    aux = prep.aux
    rho = np.sum(st.rho, axis=0)
    drho = np.sum(T.drho, axis=0)
    theta = np.sum(B.theta_rho, axis=0)
    ke = 0.5 * np.sum(u * u, axis=0)
    uR = np.sum(u * aux["R"], axis=0)

    def jsum(fv):
        return np.sum(fv.j_rho, axis=0)

    def grad_of(fn):
        return np.stack([_D(prep, fn(a), a) for a in range(dim)])

    k_rate = rho * np.sum(u * T.du, axis=0) + ke * drho
    k_bnd = ctx.bnd(lambda tr, fv, a, s: jsum(fv) * 0.5 * np.sum(tr["u"] ** 2, axis=0))
    reports = []
    if model.base == "shallow_water_rotating":
        g = model.g_const
        grad_eta = grad_of(lambda a: np.sum(prep.padded[a]["rho"], axis=0) + prep.aux_pad[a]["Z"])
        exch = g * rho * np.sum(u * grad_eta, axis=0)
        k_bulk = -exch + np.sum(B.b * u, axis=0) - theta * (ke + uR)
        eta = rho + aux["Z"]
        reports.append(_report(ctx, "kinetic", ctx.vol(k_rate), ctx.vol(k_bulk), k_bnd, C))
        reports.append(
            _report(
                ctx,
                "potential",
                ctx.vol(g * eta * drho),
                ctx.vol(exch + theta * g * eta),
                ctx.bnd(lambda tr, fv, a, s: jsum(fv) * g * (np.sum(tr["rho"], axis=0) + tr["aux"]["Z"])),
                C,
            )
        )
        form = "shallow_water"
    else:
        tq = thermo_quantities(model.eq, rho, st.s)
        grad_p = grad_of(
            lambda a: thermo_quantities(
                model.eq, np.sum(prep.padded[a]["rho"], axis=0), prep.padded[a]["s"]
            ).p
        )
        up = np.sum(u * grad_p, axis=0)
        k_bulk = -up + np.sum(B.b * u, axis=0) - theta * (ke + uR)
        rotating = model.base == "euler_rotating_gravity"
        if rotating:
            grad_phi = grad_of(lambda a: prep.aux_pad[a]["phi"])
            ugphi = rho * np.sum(u * grad_phi, axis=0)
            k_bulk = k_bulk - ugphi
        reports.append(_report(ctx, "kinetic", ctx.vol(k_rate), ctx.vol(k_bulk), k_bnd, C))

        def h_bnd(tr, fv, a, s):
            tb = thermo_quantities(model.eq, np.sum(tr["rho"], axis=0), tr["s"])
            return jsum(fv) * tb.h_enth

        reports.append(
            _report(
                ctx,
                "internal",
                ctx.vol(tq.g * drho + tq.T * T.ds),
                ctx.vol(up + theta * tq.g + B.theta_s * tq.T),
                ctx.bnd(h_bnd),
                C,
            )
        )
        if rotating:
            phi = aux["phi"]
            reports.append(
                _report(
                    ctx,
                    "potential",
                    ctx.vol(phi * drho),
                    ctx.vol(theta * phi + ugphi),
                    ctx.bnd(lambda tr, fv, a, s: jsum(fv) * tr["aux"]["phi"]),
                    C,
                )
            )
            form = "rotating"
        else:
            form = "euler"
    reports.append(energy_budget(model, st, form=form, ctx=ctx, C=C))
    reports[-1].quantity = "total"
    return reports


def split_sum_discrepancy(reports):
    """Columnwise |sum of splits - total| relative to the total's scale."""
    parts, total = reports[:-1], reports[-1]
    out = {}
    for col in ("d_dt", "bulk", "boundary"):
        s = sum(getattr(r, col) for r in parts)
        out[col] = abs(s - getattr(total, col)) / total.scale
    return out


# ---------------------------------------------------------------------------
# Boundary-form equivalence


@dataclass
class EquivalenceReport:
    """Values of equivalent boundary energy-flow expressions.

    ``groups`` maps a group name to {form name: value}; forms within a group
    should agree.  ``relations`` holds the max violation of the boundary
    relations the equivalence relies on.
    """

    groups: dict
    relations: dict = field(default_factory=dict)

    @property
    def max_discrepancy(self):
        worst = 0.0
        for forms in self.groups.values():
            for a, b in itertools.combinations(forms.values(), 2):
                worst = max(worst, abs(a - b))
        return worst

    @property
    def scale(self):
        vals = [abs(v) for f in self.groups.values() for v in f.values()]
        return max(vals + [1.0])

    @property
    def consistent(self):
        return all(v <= 1e-10 * max(1.0, self.scale) for v in self.relations.values())

    def __float__(self):
        return float(self.max_discrepancy)


def boundary_form_equivalence(model, state, sources=None, closures=None, ctx=None):
    """Evaluate the equivalent boundary energy-flow expressions.

    Generic group: J.u - j dl/drho - j_s dl/ds (- j_adv : dl/dadv), the two
    j_rho-weighted forms and (rho dl/drho + s dl/ds - u.m)(u.n).  Euler adds
    j(|u|^2/2 + g) + j_s T, j(|u|^2/2 + h) and -(e + p) u.n.  MHD adds the
    pair J.u - j_B.dl/dB and -(m.u)(u.n) - (dl/dB.u)(B.n) + (dl/dB.B)(u.n).
    Inconsistent fluxes are reported in ``relations``, never averaged away.
    """
    ctx = _ctx(model, state, sources, closures, "momentum", ctx)
    if model.korteweg:
        raise BudgetError("boundary-form equivalence is stated for first-order Lagrangians")
    nidx = sum(model.adv_rank) if model.has_adv else 0
    groups = {"generic": {}}
    rel = {"j_s": 0.0, "J": 0.0}

    def vd_of(tr):
        return model.derivs(tr["u"], tr["rho"], tr["s"], tr["aux"], tr.get("adv"))

    def add(group, name, fn):
        groups.setdefault(group, {})[name] = ctx.bnd(fn)

    def adv_term(tr, fv):
        if not model.has_adv:
            return 0.0
        return full_contract(fv.j_adv, vd_of(tr).dl_dadv, nidx)

    def form_J(tr, fv, a, s):
        vd = vd_of(tr)
        return (
            np.sum(fv.J * tr["u"], axis=0) - np.sum(fv.j_rho * vd.dl_drho, axis=0)
            - fv.j_s * vd.dl_ds - adv_term(tr, fv)
        )

    def form_jm(tr, fv, a, s):
        vd = vd_of(tr)
        rt = np.sum(tr["rho"], axis=0)
        mu = np.sum(tr["m"] * tr["u"], axis=0) / rt
        return np.sum(fv.j_rho * (mu - vd.dl_drho), axis=0) - fv.j_s * vd.dl_ds - adv_term(tr, fv)

    def form_j(tr, fv, a, s):
        vd = vd_of(tr)
        rt = np.sum(tr["rho"], axis=0)
        mu = np.sum(tr["m"] * tr["u"], axis=0) / rt
        return np.sum(fv.j_rho * (mu - vd.dl_drho - tr["s"] / rt * vd.dl_ds), axis=0) - adv_term(tr, fv)

    def form_un(tr, fv, a, s):
        vd = vd_of(tr)
        un = s * tr["u"][a]
        out = (
            np.sum(tr["rho"] * vd.dl_drho, axis=0) + tr["s"] * vd.dl_ds
            - np.sum(tr["u"] * tr["m"], axis=0)
        ) * un
        s_adv, s_ext = stress_normal(model, tr, a, s)
        out = out + np.sum((s_ext - s_adv) * tr["u"], axis=0)
        if model.has_adv:
            # j_adv = -adv (u.n) on every closure
            out = out + full_contract(tr["adv"], vd.dl_dadv, nidx) * un
        return out

    add("generic", "J_u", form_J)
    add("generic", "u_n", form_un)
    if not model.has_adv and model.stress is None:
        add("generic", "j_rho_m", form_jm)
        add("generic", "j_rho_only", form_j)

    if model.base == "euler" and model.stress is None:
        def e_g(tr, fv, a, s):
            tb = thermo_quantities(model.eq, np.sum(tr["rho"], axis=0), tr["s"])
            return np.sum(fv.j_rho, axis=0) * (0.5 * np.sum(tr["u"] ** 2, axis=0) + tb.g) + fv.j_s * tb.T

        def e_h(tr, fv, a, s):
            tb = thermo_quantities(model.eq, np.sum(tr["rho"], axis=0), tr["s"])
            return np.sum(fv.j_rho, axis=0) * (0.5 * np.sum(tr["u"] ** 2, axis=0) + tb.h_enth)

        def e_flux(tr, fv, a, s):
            rt = np.sum(tr["rho"], axis=0)
            tb = thermo_quantities(model.eq, rt, tr["s"])
            e = 0.5 * rt * np.sum(tr["u"] ** 2, axis=0) + model.eq.eps(rt, tr["s"])
            return -(e + tb.p) * s * tr["u"][a]

        add("euler", "j_g_T", e_g)
        add("euler", "j_h", e_h)
        add("euler", "e_plus_p", e_flux)

    if model.base == "mhd":
        def mhd_flux(tr, fv, a, s):
            return np.sum(fv.J * tr["u"], axis=0) - np.sum(fv.j_adv * vd_of(tr).dl_dadv, axis=0)

        def mhd_traces(tr, fv, a, s):
            al = vd_of(tr).dl_dadv
            un = s * tr["u"][a]
            return (
                -np.sum(tr["m"] * tr["u"], axis=0) * un
                - np.sum(al * tr["u"], axis=0) * s * tr["adv"][a]
                + np.sum(al * tr["adv"], axis=0) * un
            )

        add("mhd", "J_u_minus_jB", mhd_flux)
        add("mhd", "trace_identity", mhd_traces)

    # relations j_s = (s/rho) j_rho and J = j_rho (m / rho) (unstressed case)
    for side in ctx.grid.sides:
        tr, fv = ctx.prep.traces[side], ctx.prep.fluxes[side]
        rt = np.sum(tr["rho"], axis=0)
        jt = np.sum(fv.j_rho, axis=0)
        rel["j_s"] = max(rel["j_s"], float(np.max(np.abs(fv.j_s - tr["s"] / rt * jt))))
        if not model.has_adv and model.stress is None:
            rel["J"] = max(rel["J"], float(np.max(np.abs(fv.J - jt * tr["m"] / rt))))
    return EquivalenceReport(groups, rel)


def all_budgets(model, state, sources=None, closures=None, tendency_form="momentum", C=TOL_C):
    """Reports for every budget that applies to the model."""
    ctx = budget_context(model, state, sources, closures, tendency_form)
    out = [quantity_budget("mass", model, state, ctx=ctx)]
    if model.ncomp > 1:
        out += [quantity_budget(f"mass_{k}", model, state, ctx=ctx) for k in range(model.ncomp)]
    out.append(quantity_budget("entropy", model, state, ctx=ctx))
    out.append(energy_budget(model, state, form="generic", ctx=ctx, C=C))
    for form, base in _FORM_BASE.items():
        if model.base == base and model.stress is None:
            out.append(energy_budget(model, state, form=form, ctx=ctx, C=C))
            for r in energy_split_budget(model, state, ctx=ctx, C=C)[:-1]:
                r.quantity = f"split_{r.quantity}"
                out.append(r)
    return out


def time_differenced_budget(kind, model, state, sources=None, closures=None, dt=None, C=TOL_C):
    """End-to-end variant: d_dt from one RK4 step instead of the chain rule.

    ``kind`` is mass, entropy or energy.  The quantity is differenced over
    [t, t+dt] and the bulk and boundary columns are averaged over the two
    endpoints (trapezoid rule), so the time error is O(dt^2).
    """
    from .dynamics import cfl_limit, step

    src, closures = split_sources(sources, closures)
    if kind not in ("mass", "entropy", "energy"):
        raise BudgetError(f"unknown time-differenced quantity {kind!r}")
    dt = 0.25 * cfl_limit(model, state) if dt is None else dt
    new = step(model, state, src, closures, dt)

    def columns(st):
        if kind == "energy":
            prep = apply_boundary_conditions(model, st, closures)
            rep = energy_budget(model, st, src, closures=closures)
            return total_energy(model, st, closures, prep), rep.bulk, rep.boundary
        rep = quantity_budget(kind, model, st, src, closures)
        cell = st.rho if kind == "mass" else st.s
        return float(np.sum(cell) * st.grid.cell_volume), rep.bulk, rep.boundary

    q0, b0, s0 = columns(state)
    q1, b1, s1 = columns(new)
    d = (q1 - q0) / dt
    bulk, bnd = 0.5 * (b0 + b1), 0.5 * (s0 + s1)
    scale = max(abs(d), abs(bulk), abs(bnd), 1.0)
    h = max(state.grid.spacing)
    return BudgetReport(f"{kind}_time_fd", d, bulk, bnd, ATOL + C * (h * h + dt * dt) * scale)
