"""Acceptance criteria 1-12, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary
and immediately to stdout (visible with ``pytest -s``).
"""
import functools
import itertools
import json

import numpy as np
import pytest

from openfluid.brackets import (
    case_a_check, case_b_cancellation, catalogue, extended_evolution_rate, lie_poisson_bracket,
)
from openfluid.budgets import (
    all_budgets, boundary_form_equivalence, energy_budget, energy_split_budget,
    split_sum_discrepancy, total_energy,
)
from openfluid.cli import main
from openfluid.dynamics import (
    apply_boundary_conditions, assemble_stress, cfl_limit, interior_tendency, patch_traces, step,
)
from openfluid.grid import Field, make_grid
from openfluid.material import (
    equivalence_check_1d, label_lattice, map_from_function, boundary_piola_residual, record_run,
)
from openfluid.models import Model, State
from openfluid.sources import BulkSources, SourceSet, make_flux_spec
from openfluid.thermo import StateEquation, thermo_quantities
from openfluid.verify import (
    closed_source_run, piola_field, smooth_map, smooth_map_jacobian, suite_legendre,
    suite_stress_tables,
)
from conftest import ACCEPTANCE, order, tail_order


def criterion(k, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*a, **kw):
            try:
                detail = fn(*a, **kw) or ""
            except BaseException as exc:
                line = f"criterion {k:>2} FAIL  {title}: {type(exc).__name__}: {str(exc)[:120]}"
                ACCEPTANCE[k] = line
                print(line)
                raise
            line = f"criterion {k:>2} PASS  {title}" + (f"  [{detail}]" if detail else "")
            ACCEPTANCE[k] = line
            print(line)
        return run
    return wrap


def box(n, dim=2):
    return make_grid(dim, [(0, 1)] * dim, [n] * dim)


def closed(g):
    return {p: make_flux_spec("closed", {}, p, g) for p in g.patches}


def wall_state(g):
    x, y = g.mesh()
    u = 0.1 * np.stack([np.sin(np.pi * x) * np.sin(2 * np.pi * y),
                        -np.sin(2 * np.pi * x) * np.sin(np.pi * y)])
    rho = 1 + 0.1 * np.cos(np.pi * x) * np.cos(np.pi * y)
    return State(g, u, rho, 0.2 * rho + 0.05 * x)


def open_case(n, neumann=False):
    """Inflow on the left, outflow_inviscid on the right, walls elsewhere.

    The initial data satisfy every closure row at the faces.
    """
    g = box(n)
    x, y = g.mesh()
    q = 0.1 * (x ** 2 - 2 * x ** 3 / 3) if neumann else 0.1 * x ** 2
    st = State(g, np.stack([0.3 + 0.05 * np.sin(np.pi * x) * np.cos(y),
                            0.1 * np.sin(np.pi * x) * np.sin(np.pi * y)]), 1.1 + q, 0.2 + q)
    cls = closed(g)
    cls["left"] = make_flux_spec("inflow", {"u0": [0.3, 0.0], "rho0": 1.1, "s0": 0.2}, "left", g)
    cls["right"] = make_flux_spec("outflow_inviscid", {"nu0": 0.3}, "right", g)
    return g, st, cls


def open_case_1d(n):
    g = box(n, 1)
    (x,) = g.mesh()
    st = State(g, np.stack([0.3 + 0.05 * np.sin(np.pi * x)]), 1.1 + 0.1 * x ** 2, 0.2 + 0.1 * x ** 2)
    cls = {"left": make_flux_spec("inflow", {"u0": [0.3], "rho0": 1.1, "s0": 0.2}, "left", g),
           "right": make_flux_spec("outflow_inviscid", {"nu0": 0.3}, "right", g)}
    return g, st, cls


SRC = BulkSources(b=lambda c, t: np.stack([np.sin(c[0]), c[1]]),
                  theta_rho=(lambda c, t: 0.1 + 0.05 * c[0] * c[1],),
                  theta_s=lambda c, t: 0.02 + 0 * c[0])
SRC_1D = BulkSources(b=lambda c, t: np.stack([np.sin(c[0])]),
                     theta_rho=(lambda c, t: 0.1 + 0.05 * c[0],),
                     theta_s=lambda c, t: 0.02 + 0 * c[0])
ROT_R = lambda x, y: np.stack([-0.5 * y, 0.5 * x])


# ---------------------------------------------------------------------------

@criterion(1, "closed-fluid limit")
def test_closed_fluid_limit():
    model = Model("euler", 2)
    drift = []
    for n in (16, 32, 64):
        g = box(n)
        st = wall_state(g)
        cl = closed(g)
        M0, S0, E0 = st.rho.sum(), st.s.sum(), total_energy(model, st, cl)
        while st.t < 1 - 1e-12:
            st = step(model, st, closures=cl, dt=min(cfl_limit(model, st, 0.4), 1 - st.t))
        dM = abs(st.rho.sum() - M0) / M0
        dS = abs(st.s.sum() - S0) / S0
        drift.append(abs(total_energy(model, st, cl) - E0))
    assert dM <= 1e-10 and dS <= 1e-10
    p = order(drift)
    assert p >= 1.8
    return f"64^2: dM/M={dM:.1e} dS/S={dS:.1e}, energy drift order {p:.2f}"


@criterion(2, "open-budget identities")
def test_open_budget_identities():
    model1, model2 = Model("euler", 1), Model("euler", 2)
    res = {}
    for n in (16, 32, 64):
        for tag, (g, st, cls), model, src in (("1d", open_case_1d(4 * n), model1, SRC_1D),
                                               ("2d", open_case(n), model2, SRC)):
            for r in all_budgets(model, st, src, cls):
                res.setdefault((tag, r.quantity), []).append(abs(r.residual))
    orders = {}
    for key, errs in res.items():
        if max(errs) < 1e-12:
            continue
        orders[key] = order(errs)
        assert orders[key] >= 1.8, (key, errs)
    assert orders, "every residual at round-off"
    worst_rel = 0.0
    for n in (16, 32, 64):
        g, st, cls = open_case(n)
        a = energy_budget(model2, st, SRC, "generic", cls)
        b = energy_budget(model2, st, SRC, "euler", cls)
        for col in ("d_dt", "bulk", "boundary"):
            x, y = getattr(a, col), getattr(b, col)
            worst_rel = max(worst_rel, abs(x - y) / max(abs(x), abs(y), 1e-300))
    assert worst_rel <= 1e-10
    return f"min order {min(orders.values()):.2f}, generic vs euler {worst_rel:.1e}"


@criterion(3, "energy splits")
def test_energy_splits():
    models = [Model("euler", 2),
              Model("euler_rotating_gravity", 2, R=ROT_R, phi=lambda x, y: 0.3 * y),
              Model("shallow_water_rotating", 2, R=ROT_R, Z=lambda x, y: 0.1 * x * y, g_const=2.0)]
    worst = 0.0
    for model in models:
        g, st, cls = open_case(16)
        worst = max(worst, max(split_sum_discrepancy(energy_split_budget(model, st, SRC, cls)).values()))
    assert worst <= 1e-10

    g = box(16)
    x, y = g.mesh()
    model = models[0]
    st = State(g, np.zeros((2,) + g.shape), 1 + 0.1 * x * y, 0.2 + 0 * x)
    theta = lambda c, t: 0.1 + 0.05 * c[0]
    reps = {r.quantity: r for r in energy_split_budget(model, st, BulkSources(theta_rho=(theta,)),
                                                        closed(g))}
    kin = reps["kinetic"]
    assert kin.d_dt == 0 and kin.bulk == 0 and kin.boundary == 0
    gibbs = thermo_quantities(model.eq, st.rho[0], st.s).g
    ref = float(np.sum(theta(g.mesh(), 0) * gibbs) * g.cell_volume)
    assert reps["internal"].bulk == pytest.approx(ref, rel=1e-12)
    return f"split sum {worst:.1e}"


@criterion(4, "boundary-form equivalence")
def test_boundary_form_equivalence():
    g, st, cls = open_case(16)
    eq = boundary_form_equivalence(Model("euler", 2), st, SRC, cls)
    assert eq.consistent and len(eq.groups["euler"]) >= 3
    assert eq.max_discrepancy <= 1e-10 * eq.scale
    x, y = g.mesh()
    B = np.stack([0.2 + 0.1 * np.cos(y), 0.1 * np.sin(x)])
    mhd = boundary_form_equivalence(Model("mhd", 2), State(g, st.u, st.rho, st.s, adv=B), closures=cls)
    assert "mhd" in mhd.groups and abs(list(mhd.groups["mhd"].values())[0]) > 1e-3
    assert mhd.max_discrepancy <= 1e-10 * mhd.scale
    return f"euler {eq.max_discrepancy / eq.scale:.1e}, mhd {mhd.max_discrepancy / mhd.scale:.1e}"


@criterion(5, "Legendre/Hamiltonian consistency")
def test_legendre_consistency():
    verdicts = suite_legendre(seed=0, n=100)
    bad = [v for v in verdicts if not v.passed]
    assert not bad, bad
    names = {v.check for v in verdicts}
    assert {"hamiltonian_closed_form_euler", "hamiltonian_closed_form_euler_rotating_gravity",
            "hamiltonian_closed_form_shallow_water_rotating", "euler_m_form_vs_u_form"} <= names
    worst = max(v.value for v in verdicts)
    return f"{len(verdicts)} checks, worst {worst:.1e}"


@criterion(6, "bracket suite")
def test_bracket_suite():
    model = Model("euler_rotating_gravity", 2, R=ROT_R, phi=lambda x, y: 0.3 * y)
    rng = np.random.default_rng(6)
    g = box(12)
    x, y = g.mesh()
    worst = 0.0
    for _ in range(5):
        a = rng.uniform(-0.2, 0.2, 6)
        st = State(g, np.stack([a[0] * np.sin(3 * x + a[1]), a[2] * np.cos(2 * y + a[3])]),
                   1 + 0.1 * np.cos(x + a[4] * y), 0.3 + a[5] * x)
        cat = catalogue(model)
        for f, h in itertools.combinations(cat.values(), 2):
            ab = lie_poisson_bracket(f, h, st).lp
            ba = lie_poisson_bracket(h, f, st).lp
            worst = max(worst, abs(ab + ba) / max(abs(ab), abs(ba), 1e-300))
    assert worst <= 1e-10

    res = {}
    for n in (16, 32, 64):
        g, st, cls = open_case(n)
        for name, f in catalogue(model).items():
            res.setdefault(name, []).append(abs(extended_evolution_rate(f, model, st, SRC, cls).residual))
    for name, errs in res.items():
        if max(errs) > 1e-12:
            assert tail_order(errs) >= 1.8, (name, errs)
            assert errs[-1] <= 50 * (1 / 64) ** 2 * max(1.0, abs(catalogue(model)[name].value(st)))

    g, st, _ = open_case(16)
    cb = case_b_cancellation(model, st)
    assert cb <= 1e-12
    g = box(16)
    rows, bnd = case_a_check(Model("euler", 2), wall_state(g), closed(g))
    assert rows == 0.0 and bnd == 0.0
    return f"antisymmetry {worst:.1e}, case B {cb:.1e}"


@criterion(7, "stress assembler")
def test_stress_assembler():
    verdicts = suite_stress_tables(seed=7)
    assert verdicts and all(v.passed for v in verdicts), [v for v in verdicts if not v.passed]
    g = box(4)
    rng = np.random.default_rng(7)
    B = rng.integers(-3, 4, (2,) + g.shape).astype(float)
    dl_dB = rng.integers(-3, 4, (2,) + g.shape).astype(float)
    sig = assemble_stress(Field(g, B, (1, 0), "density"), dl_dB).values
    assert np.array_equal(sig, np.einsum("i...,j...->ij...", B, dl_dB))
    return f"{len(verdicts)} table checks"


def _gauge_pair(n, sign=+1):
    """du/dt and budget residuals for (R, b) against (R + grad f, b + sign theta_rho grad f).

    J follows automatically: the closures evaluate J from the absolute
    momentum, which picks up j_rho grad f under the new R.
    """
    grad_f = lambda x, y: np.stack([x * y + 0.3 * y ** 2, x ** 2 / 2 + 0.6 * x * y])
    theta = lambda c, t: 0.1 + 0.05 * c[0] * c[1]
    b = lambda c, t: np.stack([np.sin(c[1]), 0.2 * c[0]])
    g, st, cls = open_case(n)
    m1 = Model("euler_rotating_gravity", 2, R=ROT_R)
    m2 = Model("euler_rotating_gravity", 2, R=lambda x, y: ROT_R(x, y) + grad_f(x, y))
    s1 = BulkSources(b=b, theta_rho=(theta,))
    s2 = BulkSources(b=lambda c, t: b(c, t) + sign * theta(c, t) * grad_f(*c), theta_rho=(theta,))
    t1 = interior_tendency(m1, st, closures=cls, sources=s1, form="velocity")
    t2 = interior_tendency(m2, st, closures=cls, sources=s2, form="velocity")
    du = float(np.max(np.abs(t1.du - t2.du)) / np.max(np.abs(t1.du)))
    worst = 0.0
    for r1, r2 in zip(all_budgets(m1, st, s1, cls, tendency_form="velocity"),
                      all_budgets(m2, st, s2, cls, tendency_form="velocity")):
        scale = max(abs(r1.d_dt), abs(r1.bulk), abs(r1.boundary), 1e-300)
        worst = max(worst, abs(r1.residual - r2.residual) / scale)
    return du, worst


@criterion(8, "gauge invariance")
def test_gauge_invariance():
    du, bud = _gauge_pair(16)
    assert du <= 1e-11 and bud <= 1e-11
    return f"du/dt {du:.1e}, budgets {bud:.1e} (b' = b + theta_rho grad f)"


@pytest.mark.xfail(strict=True, reason="with b - theta_rho grad f the momentum source does not cancel "
                                       "the change in R; only the + sign is a gauge symmetry")
def test_gauge_literal_minus_sign():
    du, bud = _gauge_pair(16, sign=-1)
    assert du <= 1e-11 and bud <= 1e-11


@criterion(9, "flux closures")
def test_flux_closures():
    model = Model("euler", 2)
    g, st, cls = open_case(32)
    left = patch_traces(model, st, cls, "left")
    assert np.max(np.abs(left["u"] - np.array([[0.3], [0.0]]))) < 1e-12
    assert np.max(np.abs(left["rho"] - 1.1)) < 1e-12 and np.max(np.abs(left["s"] - 0.2)) < 1e-12
    right = patch_traces(model, st, cls, "right")
    assert np.max(np.abs(right["u"][0] - 0.3)) < 1e-12
    for p in ("bottom", "top"):
        assert np.max(np.abs(patch_traces(model, st, cls, p)["u"][1])) < 1e-12

    eq = StateEquation("ideal_gas", gamma=1.4, c_v=2.0)
    vmodel = Model("euler", 2, eq=eq)
    x, y = g.mesh()
    u0, T0 = np.array([0.3, 0.0]), 1.3
    rho = 1.1 + 0.1 * x ** 2
    s = eq.entropy_from_temperature(rho, 1.3 + 0.1 * (1 - x) ** 2)
    vst = State(g, np.stack([0.3 + 0.05 * np.sin(np.pi * x) * np.cos(y),
                             0.1 * np.sin(np.pi * x) * np.sin(np.pi * y)]), rho, s)
    vcls = dict(cls, right=make_flux_spec("outflow_viscous", {"u0": list(u0), "T0": T0}, "right", g))
    tr = patch_traces(vmodel, vst, vcls, "right")
    assert np.max(np.abs(tr["u"] - u0[:, None])) < 1e-12
    T = eq.temperature(tr["rho"][0], tr["s"])
    assert np.max(np.abs(T - T0)) < 1e-10
    # independent inversion against the state-equation oracle
    s_oracle = eq.entropy_from_temperature(tr["rho"][0], np.full_like(tr["s"], T0))
    assert np.max(np.abs(tr["s"] - s_oracle)) < 1e-10
    return "inflow, outflow_inviscid, outflow_viscous, closed"


@criterion(10, "Korteweg boundary row and budget")
def test_korteweg():
    model = Model("euler_korteweg", 2, lam=0.01)
    g = box(16)
    prep = apply_boundary_conditions(Model("euler_korteweg", 2, lam=1.0), wall_state(g), closed(g))
    assert prep.residuals["korteweg"] < 1e-12
    errs = []
    for n in (16, 32, 64):
        g, st, cls = open_case(n, neumann=True)
        assert apply_boundary_conditions(model, st, cls).residuals["korteweg"] < 1e-12
        rep = [r for r in all_budgets(model, st, SRC, cls) if r.quantity.startswith("energy")][0]
        errs.append(abs(rep.residual))
    p = order(errs)
    assert p >= 1.8
    return f"Neumann row {prep.residuals['korteweg']:.1e}, energy residual order {p:.2f}"


@criterion(11, "material/Eulerian equivalence")
def test_material_equivalence():
    errs, discs, hs = [], [], []
    for n in (32, 64, 128):
        model, run = closed_source_run(n)
        r = equivalence_check_1d(model, run)
        errs.append(r.pushforward_rms)
        discs.append(r.mass_discrepancy)
        hs.append(1.0 / n)
    p_push = order(errs, hs)
    assert p_push >= 1.8
    assert all(d <= 10 * h ** 2 for d, h in zip(discs, hs))

    perrs = []
    for n in (8, 16, 32):
        lab, sh = label_lattice([(0, 1), (0, 1)], [n, n])
        perrs.append(boundary_piola_residual(map_from_function(lab, sh, smooth_map, smooth_map_jacobian),
                                             piola_field))
    p_piola = order(perrs)
    assert p_piola >= 1.8

    # open flow: labels leave through the outflow face at the rate of the boundary flux
    model = Model("euler", 1)
    g = box(32, 1)
    n = 32
    st = State(g, np.full((1, n), 0.5), np.ones(n), model.eq.entropy_from_temperature(np.ones(n), 1.0))
    cl = {"left": make_flux_spec("inflow", {"u0": [0.5], "rho0": 1.0, "s0": float(st.s[0])}, "left", g),
          "right": make_flux_spec("outflow_inviscid", {"nu0": 0.5}, "right", g)}
    run = record_run(model, st, SourceSet(BulkSources(), cl), t_end=0.1, dt=0.1 / 8)
    r = equivalence_check_1d(model, run)
    assert abs(r.material_mass_change - r.budget_mass_change) < 1e-12
    return f"pushforward order {p_push:.2f}, Piola order {p_piola:.2f}, mass {max(discs):.1e}"


@criterion(12, "determinism")
def test_determinism(tmp_path):
    cfg = {
        "grid": {"dim": 2, "extents": [[0, 1], [0, 1]], "cells": [16, 16]},
        "model": {"family": "euler"},
        "state_equation": {"family": "ideal_gas", "gamma": 1.4},
        "initial": {"u": ["0.3 + 0.05*sin(pi*x)*cos(y)", "0.1*sin(pi*x)*sin(pi*y)"],
                    "rho": "1.1 + 0.1*x^2", "s": "0.2 + 0.1*x^2"},
        "bulk_sources": {"theta_rho": "0.1 + 0.05*x*y"},
        "boundaries": [{"patch": "left", "mode": "inflow",
                        "params": {"u0": [0.3, 0.0], "rho0": 1.1, "s0": 0.2}},
                       {"patch": "right", "mode": "outflow_inviscid", "params": {"nu0": 0.3}},
                       {"patch": "bottom", "mode": "closed"}, {"patch": "top", "mode": "closed"}],
        "time": {"t_end": 0.05, "cfl": 0.4},
        "seed": 42,
    }
    path = tmp_path / "open.json"
    path.write_text(json.dumps(cfg))
    outs = []
    for d in ("a", "b"):
        code = main(["run", "--config", str(path), "--out", str(tmp_path / d)])
        assert code == 0
        outs.append((tmp_path / d / "timeseries.csv").read_bytes())
    assert outs[0] == outs[1] and len(outs[0]) > 0
    return f"{len(outs[0])} bytes identical"
