"""Verification suites driven by the command line.

Each suite returns a list of Verdict rows.  ``budgets`` and ``bracket``
audit the configured scenario at its initial state; ``legendre``,
``stress_tables`` and ``material`` run self-contained desk-scale checks.
"""

from dataclasses import asdict, dataclass
import itertools

import numpy as np

from .brackets import (BracketError, case_a_check, case_b_cancellation, catalogue,
                       euler_m_tendency, extended_evolution_rate, lie_poisson_bracket)
from .budgets import BudgetError, all_budgets, boundary_form_equivalence, tolerance
from .dynamics import interior_tendency
from .grid import full_contract, kappa_hat, make_grid, triple_dot
from .models import FAMILIES, Model, State, hamiltonian_closed_form
from .thermo import StateEquation

SUITES = ("budgets", "bracket", "legendre", "stress_tables", "material")


@dataclass
class Verdict:
    suite: str
    check: str
    passed: bool
    value: float
    tol: float
    detail: str = ""

    def as_dict(self):
        d = asdict(self)
        d["passed"] = bool(d["passed"])
        d["value"] = float(d["value"])
        d["tol"] = float(d["tol"])
        return d


def _v(suite, check, value, tol, detail="", cmp="le"):
    value = float(value)
    ok = value <= tol if cmp == "le" else value >= tol
    return Verdict(suite, check, bool(ok and np.isfinite(value)), value, float(tol), detail)


def fitted_order(h, err):
    """Least-squares slope of log(err) against log(h)."""
    return float(np.polyfit(np.log(h), np.log(np.abs(err)), 1)[0])


# ---------------------------------------------------------------------------
# budgets


BUDGET_COLUMNS = ("quantity", "d_dt", "bulk", "boundary", "residual", "tol", "pass")


def suite_budgets(scenario, rows=None):
    """Every applicable budget at the initial state; ``rows`` receives CSV rows."""
    model, state, src = scenario.model, scenario.initial_state(), scenario.sources
    out = []
    for rep in all_budgets(model, state, src):
        if rows is not None:
            rows.append(rep.row())
        out.append(Verdict("budgets", rep.quantity, rep.passed, abs(rep.residual), rep.tol))
    try:
        eq = boundary_form_equivalence(model, state, src)
    except BudgetError as exc:
        out.append(Verdict("budgets", "boundary_forms", True, 0.0, 0.0, f"skipped: {exc}"))
    else:
        out.append(_v("budgets", "boundary_forms", eq.max_discrepancy / max(eq.scale, 1e-300), 1e-10,
                      "max relative discrepancy between boundary energy forms"))
    return out


# ---------------------------------------------------------------------------
# bracket


BRACKET_COLUMNS = ("functional", "bulk", "boundary", "sources", "d_dt", "residual")


def suite_bracket(scenario, rows=None):
    """Antisymmetry, particular cases and the evolution identity.

    ``rows`` (a list) receives one CSV row per catalogue functional.
    """
    model, state, src = scenario.model, scenario.initial_state(), scenario.sources
    try:
        cat = catalogue(model)
    except BracketError as exc:
        return [Verdict("bracket", "applicable", False, np.nan, 0.0, str(exc))]
    out = []
    worst = 0.0
    for f, h in itertools.combinations_with_replacement(list(cat.values()), 2):
        a = lie_poisson_bracket(f, h, state).lp
        b = lie_poisson_bracket(h, f, state).lp
        scale = max(abs(a), abs(b), 1e-300)
        worst = max(worst, abs(a + b) / scale if f is not h else abs(a) / max(_hscale(h, state), 1e-300))
    out.append(_v("bracket", "antisymmetry", worst, 1e-10, "relative |{f,h} + {h,f}|"))

    closed = {name: cl for name, cl in src.closures.items() if cl.mode == "closed"}
    rows_a, bnd_a = case_a_check(model, state, src.closures)
    hs = _hscale(cat["hamiltonian"], state)
    if len(closed) == len(state.grid.patches):
        out.append(_v("bracket", "case_A_rows", rows_a, 1e-12 * max(hs, 1.0), "zero-flux trace rows"))
        out.append(_v("bracket", "case_A_boundary", bnd_a, 1e-12 * max(hs, 1.0), "boundary bracket"))
    else:
        same = (rows_a <= 1e-12) == (bnd_a <= 1e-12 * max(hs, 1.0))
        out.append(Verdict("bracket", "case_A_equivalence", same, bnd_a, 0.0,
                           "trace rows vanish iff the boundary bracket vanishes"))
    out.append(_v("bracket", "case_B_cancellation", case_b_cancellation(model, state), 1e-12 * max(hs, 1.0)))

    g = state.grid
    for name, f in cat.items():
        r = extended_evolution_rate(f, model, state, src)
        scale = max(abs(r.d_dt), abs(r.lp), abs(r.bulk_sources), abs(r.boundary_sources), 1.0)
        tol = tolerance(g, scale)
        out.append(_v("bracket", f"evolution_{name}", abs(r.residual), tol, "|d/dt f - R(f)|"))
        if rows is not None:
            rows.append({"functional": name, "bulk": r.split.bulk, "boundary": r.split.boundary,
                         "sources": r.bulk_sources + r.boundary_sources, "d_dt": r.d_dt,
                         "residual": r.residual})
    return out


def _hscale(f, state):
    return abs(f.value(state)) + 1.0


# ---------------------------------------------------------------------------
# legendre


def family_models(dim=2):
    """One representative model per family."""
    ex = {"R": lambda x, y=0.0: np.stack([-0.3 * np.broadcast_to(y, np.shape(x)), 0.3 * x])[:dim],
          "phi": lambda x, y=0.0: 0.5 * x + 0.2 * np.asarray(y), "Z": lambda x, y=0.0: 0.1 * x}
    out = {
        "euler": Model("euler", dim),
        "euler_rotating_gravity": Model("euler_rotating_gravity", dim, R=ex["R"], phi=ex["phi"]),
        "shallow_water_rotating": Model("shallow_water_rotating", dim, R=ex["R"], Z=ex["Z"], g_const=2.0),
        "multicomponent_euler": Model("multicomponent_euler", dim, weights=(1.0, 0.6)),
        "tensor_advected": Model("tensor_advected", dim, adv_rank=(1, 0)),
        "euler_korteweg": Model("euler_korteweg", dim, lam=0.01),
        "with_boundary_stress": Model("with_boundary_stress", dim, base_family="euler",
                                      stress=lambda c, t: np.zeros((dim, dim) + np.shape(c[0]))),
    }
    if dim == 2:
        out["mhd"] = Model("mhd", 2)
    assert set(out) <= set(FAMILIES)
    return out


def random_states(model, n, rng, shape=(4, 4)):
    dim = model.dim
    for _ in range(n):
        coords = [rng.uniform(0, 1, shape) for _ in range(dim)]
        aux = model.aux(coords)
        u = rng.uniform(-2, 2, (dim,) + shape)
        rho = rng.uniform(0.5, 2.0, (model.ncomp,) + shape)
        T = rng.uniform(0.5, 2.0, shape)
        s = np.zeros(shape) if model.eq is None else model.eq.entropy_from_temperature(np.sum(rho, 0), T)
        yield u, rho, s, aux


def suite_legendre(seed=0, n=100, dim=2):
    rng = np.random.default_rng(seed)
    out = []
    for name, model in family_models(dim).items():
        rt_err = 0.0
        h_err = 0.0
        for u, rho, s, aux in random_states(model, n, rng):
            m = model.momentum(u, rho, aux)
            u2 = model.velocity(m, rho, aux)
            m2 = model.momentum(u2, rho, aux)
            rt_err = max(rt_err, float(np.max(np.abs(u2 - u)) / np.max(np.abs(u))),
                         float(np.max(np.abs(m2 - m)) / np.max(np.abs(m))))
            if model.base in ("euler", "euler_rotating_gravity", "shallow_water_rotating") and model.stress is None:
                h, _ = model.hamiltonian(m, rho, s, aux)
                hc = hamiltonian_closed_form(model, m, rho, s, aux)
                h_err = max(h_err, float(np.max(np.abs(h - hc) / np.maximum(np.abs(hc), 1.0))))
        out.append(_v("legendre", f"round_trip_{name}", rt_err, 1e-13))
        if model.base in ("euler", "euler_rotating_gravity", "shallow_water_rotating") and model.stress is None:
            out.append(_v("legendre", f"hamiltonian_closed_form_{name}", h_err, 1e-13))
    d = m_form_discrepancy()
    out.append(_v("legendre", "euler_m_form_vs_u_form", d, 1e-12))
    return out


def m_form_discrepancy(n=8):
    """Momentum-form Euler tendency against the chain-ruled velocity form.

    The state is polynomial (rho affine in x, u affine in y) with a barotropic
    law so all stencils are exact and the two routes must agree to round-off.
    """
    model = Model("euler", 2, eq=StateEquation("barotropic", gamma=2.0))
    g = make_grid(2, [(0, 1), (0, 1)], (n, n))
    x, y = g.mesh()
    st = State(g, np.stack([0.3 + 0.2 * y, 0.1 - 0.1 * y]), 1 + 0.2 * x, 0 * x)
    mt = euler_m_tendency(model, st)
    worst = 0.0
    for form in ("velocity", "momentum"):
        t = interior_tendency(model, st, form=form)
        scale = max(float(np.max(np.abs(mt.dm))), 1.0)
        worst = max(worst, float(np.max(np.abs(mt.dm - t.dm))) / scale,
                    float(np.max(np.abs(mt.drho - t.drho))) / scale)
    return worst


# ---------------------------------------------------------------------------
# stress tables


def _generic_stress(t, alpha, p, q, kind, dim):
    sig = triple_dot(t, kappa_hat(alpha, q, p, dim), p, q, dim)
    if kind == "function":
        pair = full_contract(alpha, t, p + q)
        sig = sig + pair * np.eye(dim)
    return sig


def table_rows():
    """The seven reference stress rows as index formulas: (name, p, q, kind, symmetry, formula)."""
    return [
        ("pi_vector_density", 1, 0, "density", None, lambda t, a, I: np.einsum("c,d->cd", t, a)),
        ("pi_one_form_density", 0, 1, "density", None, lambda t, a, I: -np.einsum("d,c->cd", t, a)),
        ("pi_sym_contravariant_density", 2, 0, "density", "sym", lambda t, a, I: 2 * np.einsum("ac,ad->cd", t, a)),
        ("pi_sym_covariant_density", 0, 2, "density", "sym", lambda t, a, I: -2 * np.einsum("ad,ac->cd", t, a)),
        ("kappa_vector_field", 1, 0, "function", None,
         lambda t, a, I: (a @ t) * I + np.einsum("c,d->cd", t, a)),
        ("kappa_one_form", 0, 1, "function", None,
         lambda t, a, I: (a @ t) * I - np.einsum("d,c->cd", t, a)),
        ("kappa_two_form", 0, 2, "function", "anti",
         lambda t, a, I: np.sum(a * t) * I - 2 * np.einsum("ad,ac->cd", t, a)),
    ]


def _int_tensor(rng, shape, sym):
    t = rng.integers(-9, 10, size=shape).astype(float)
    if sym == "sym":
        t = t + t.T
    elif sym == "anti":
        t = t - t.T
    return t


def levi_civita():
    eps = np.zeros((3, 3, 3))
    for i, j, k in itertools.permutations(range(3)):
        eps[i, j, k] = np.linalg.det(np.eye(3)[[i, j, k]])
    return eps


def suite_stress_tables(seed=0, trials=50):
    rng = np.random.default_rng(seed)
    out = []
    for name, p, q, kind, sym, formula in table_rows():
        worst = 0.0
        for dim in (2, 3):
            I = np.eye(dim)
            for _ in range(trials):
                t = _int_tensor(rng, (dim,) * (p + q), sym)
                a = _int_tensor(rng, (dim,) * (p + q), sym)
                worst = max(worst, float(np.max(np.abs(_generic_stress(t, a, p, q, kind, dim) - formula(t, a, I)))))
        out.append(_v("stress_tables", name, worst, 0.0, "exact integer arithmetic"))
    # magnetic field as a closed 2-form: kappa_ab = eps_abm B^m, dl/dkappa_ab = eps_abm A^m / 2
    eps = levi_civita()
    worst = 0.0
    for _ in range(trials):
        B = rng.integers(-9, 10, 3).astype(float)
        A = rng.integers(-9, 10, 3).astype(float)
        k = np.einsum("abm,m->ab", eps, B)
        al = 0.5 * np.einsum("abm,m->ab", eps, A)
        worst = max(worst, float(np.max(np.abs(_generic_stress(k, al, 0, 2, "function", 3) - np.outer(B, A)))))
    out.append(_v("stress_tables", "mhd_B_outer_dl_dB", worst, 0.0, "2-form identified with B in 3D"))
    return out


# ---------------------------------------------------------------------------
# material


def suite_material(levels=(32, 64, 128)):
    from . import material as M

    out = []
    V = M.AnalyticVelocity(lambda t, x: x, lambda t, x: np.ones(len(x)))
    lab, sh = M.label_lattice([(0, 1)], [20])
    fm = M.integrate_flow_map(V, lab, 0.0, 1.0, 0.025, sh)
    err = max(float(np.max(np.abs(fm.positions[:, 0] - lab[:, 0] * np.e))), float(np.max(np.abs(fm.jac - np.e))))
    out.append(_v("material", "linear_flow_map", err, 1e-7, "u = x against X e^t and J = e^t"))

    errs, discs, hs = [], [], []
    for n in levels:
        model, run = closed_source_run(n)
        r = M.equivalence_check_1d(model, run)
        errs.append(r.pushforward_rms)
        discs.append(r.mass_discrepancy)
        hs.append(1.0 / n)
    out.append(_v("material", "pushforward_order", fitted_order(hs, errs), 1.8, "RMS pushforward vs Eulerian", "ge"))
    out.append(_v("material", "mass_bookkeeping", discs[-1], 10.0 * hs[-1] ** 2,
                  "material mass change vs bulk + boundary budget"))

    perrs, ph = [], []
    for n in (8, 16, 32):
        lab, sh = M.label_lattice([(0, 1), (0, 1)], [n, n])
        m = M.map_from_function(lab, sh, smooth_map, smooth_map_jacobian)
        perrs.append(M.boundary_piola_residual(m, piola_field))
        ph.append(1.0 / n)
    out.append(_v("material", "piola_order", fitted_order(ph, perrs), 1.8, "boundary Piola residual", "ge"))
    return out


def smooth_map(X):
    return np.stack([X[:, 0] + 0.1 * np.sin(X[:, 1]), X[:, 1] + 0.1 * X[:, 0] ** 2], axis=1)


def smooth_map_jacobian(X):
    return 1.0 - 0.02 * X[:, 0] * np.cos(X[:, 1])


def piola_field(y):
    return np.stack([np.cos(y[:, 1]), y[:, 0] * y[:, 1]], axis=1)


def closed_source_run(n, t_end=0.2, theta=0.2):
    """1D closed box with a uniform mass source, stored at every RK4 step."""
    from .material import record_run
    from .sources import BulkSources, SourceSet, make_flux_spec

    model = Model("euler", 1)
    g = make_grid(1, [(0, 1)], (n,))
    (x,) = g.mesh()
    rho = 1 + 0.1 * np.cos(np.pi * x)
    st = State(g, np.stack([0.2 * np.sin(np.pi * x)]), rho, model.eq.entropy_from_temperature(rho, 1.0))
    cl = {k: make_flux_spec("closed", {}, k, g) for k in g.patches}
    src = SourceSet(BulkSources(theta_rho=(lambda c, t: theta + 0 * c[0],)), cl)
    steps = 2 * int(np.ceil(t_end / (0.4 / n / 1.5) / 2))
    return model, record_run(model, st, src, t_end=t_end, dt=t_end / steps)


def run_suite(which, scenario=None, seed=0, rows=None):
    if which == "budgets":
        return suite_budgets(scenario, rows)
    if which == "bracket":
        return suite_bracket(scenario, rows)
    if which == "legendre":
        return suite_legendre(seed)
    if which == "stress_tables":
        return suite_stress_tables(seed)
    if which == "material":
        return suite_material()
    raise ValueError(f"unknown suite {which!r}")
