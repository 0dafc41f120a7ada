import numpy as np
import pytest

from openfluid.budgets import (
    BudgetError, all_budgets, boundary_form_equivalence, energy_budget, energy_split_budget,
    quantity_budget, split_sum_discrepancy, time_differenced_budget,
)
from openfluid.grid import make_grid
from openfluid.models import Model, State
from openfluid.sources import BulkSources, make_flux_spec
from openfluid.thermo import thermo_quantities
from conftest import order


def box(n):
    return make_grid(2, [(0, 1), (0, 1)], [n, n])


def closed(g):
    return {p: make_flux_spec("closed", {}, p, g) for p in g.patches}


def wall_state(g, amp=0.1):
    x, y = g.mesh()
    u = amp * np.stack([np.sin(np.pi * x) * np.sin(2 * np.pi * y),
                        -np.sin(2 * np.pi * x) * np.sin(np.pi * y)])
    rho = 1 + 0.1 * np.cos(np.pi * x) * np.cos(np.pi * y)
    return State(g, u, rho, 0.2 * rho)


def open_case(n):
    g = box(n)
    x, y = g.mesh()
    st0 = State(g, np.stack([0.3 + 0.05 * np.sin(np.pi * x) * np.cos(y),
                             0.1 * np.sin(np.pi * x) * np.sin(np.pi * y)]),
                1.1 + 0.1 * x ** 2, 0.2 + 0.1 * x ** 2)
    cls = closed(g)
    cls["left"] = make_flux_spec("inflow", {"u0": [0.3, 0.0], "rho0": 1.1, "s0": 0.2}, "left", g)
    cls["right"] = make_flux_spec("outflow_inviscid", {"nu0": 0.3}, "right", g)
    return g, st0, cls


SRC = BulkSources(b=lambda c, t: np.stack([np.sin(c[0]), c[1]]),
                  theta_rho=(lambda c, t: 0.1 + 0.05 * c[0] * c[1],),
                  theta_s=lambda c, t: 0.02 + 0 * c[0])


def test_closed_quantities_zero():
    g = box(16)
    for kind in ("mass", "entropy"):
        rep = quantity_budget(kind, Model("euler", 2), wall_state(g), closures=closed(g))
        assert abs(rep.d_dt) < 1e-14 and abs(rep.residual) < 1e-14 and rep.passed


def test_constant_mass_source():
    g = box(16)
    src = BulkSources(theta_rho=(lambda c, t: 0.1 + 0 * c[0],))
    rep = quantity_budget("mass", Model("euler", 2), wall_state(g), src, closed(g))
    assert rep.d_dt == pytest.approx(0.1, abs=1e-13)
    assert rep.bulk == pytest.approx(0.1, abs=1e-13) and rep.boundary == 0


def test_inflow_boundary_column():
    g, st0, cls = open_case(16)
    cls["right"] = make_flux_spec("closed", {}, "right", g)
    cls["left"] = make_flux_spec("inflow", {"u0": [0.2, 0.0], "rho0": 1.5}, "left", g)
    rep = quantity_budget("mass", Model("euler", 2), st0, closures=cls)
    assert rep.boundary == pytest.approx(0.3 * 1.0, rel=1e-13)
    assert abs(rep.residual) < 1e-13


def test_unknown_quantity():
    g = box(8)
    with pytest.raises(BudgetError):
        quantity_budget("momentum", Model("euler", 2), wall_state(g))
    with pytest.raises(BudgetError):
        quantity_budget("mass_3", Model("euler", 2), wall_state(g))
    with pytest.raises(BudgetError):
        energy_budget(Model("euler", 2), wall_state(g), form="shallow_water")


@pytest.mark.parametrize("n", [16, 32])
def test_generic_and_euler_forms_agree(n):
    g, st0, cls = open_case(n)
    model = Model("euler", 2)
    a = energy_budget(model, st0, SRC, "generic", cls)
    b = energy_budget(model, st0, SRC, "euler", cls)
    for col in ("d_dt", "bulk", "boundary"):
        assert getattr(a, col) == pytest.approx(getattr(b, col), rel=1e-10, abs=1e-12)


def test_entropy_source_feeds_energy_through_temperature():
    g = box(16)
    model = Model("euler", 2)
    st0 = wall_state(g)
    theta = lambda c, t: 0.05 * (1 + c[0])
    rep = energy_budget(model, st0, BulkSources(theta_s=theta), "euler", closed(g))
    T = thermo_quantities(model.eq, st0.rho[0], st0.s).T
    ref = float(np.sum(theta(g.mesh(), 0) * T) * g.cell_volume)
    assert rep.bulk == pytest.approx(ref, rel=1e-13)


def test_splits_at_rest_with_mass_source():
    g = box(16)
    model = Model("euler", 2)
    x, y = g.mesh()
    st0 = State(g, np.zeros((2,) + g.shape), 1 + 0 * x, 0.2 + 0 * x)
    theta = lambda c, t: 0.1 + 0 * c[0]
    reps = energy_split_budget(model, st0, BulkSources(theta_rho=(theta,)), closed(g))
    kin = reps[0]
    assert kin.quantity == "kinetic"
    assert kin.d_dt == 0 and kin.bulk == 0 and kin.boundary == 0
    internal = [r for r in reps if r.quantity == "internal"][0]
    gibbs = thermo_quantities(model.eq, st0.rho[0], st0.s).g
    assert internal.d_dt == pytest.approx(float(np.sum(0.1 * gibbs) * g.cell_volume), rel=1e-12)


@pytest.mark.parametrize("model", [
    Model("euler", 2),
    Model("euler_rotating_gravity", 2, R=lambda x, y: np.stack([-0.5 * y, 0.5 * x]),
          phi=lambda x, y: 0.3 * y),
    Model("shallow_water_rotating", 2, R=lambda x, y: np.stack([-0.5 * y, 0.5 * x]),
          Z=lambda x, y: 0.1 * x * y, g_const=2.0),
], ids=lambda m: m.family)
def test_splits_sum_to_total(model):
    g, st0, cls = open_case(16)
    reps = energy_split_budget(model, st0, SRC, cls)
    assert max(split_sum_discrepancy(reps).values()) < 1e-10


def test_shallow_water_exchange_cancels():
    errs = []
    for n in (16, 32, 64):
        g = box(n)
        model = Model("shallow_water_rotating", 2, Z=lambda x, y: 0.1 * np.cos(x + y), g_const=2.0)
        x, y = g.mesh()
        st = State(g, 0.1 * np.stack([np.sin(np.pi * x), np.sin(np.pi * y)]), 1 + 0.1 * x,
                   0 * x)
        reps = {r.quantity: r for r in energy_split_budget(model, st, closures=closed(g))}
        kin, pot, tot = reps["kinetic"], reps["potential"], reps["total"]
        assert kin.bulk + pot.bulk == pytest.approx(0.0, abs=1e-13)
        assert abs(kin.bulk) > 1e-3
        errs.append(abs(tot.d_dt))
    assert order(errs) > 1.8


def test_boundary_forms_euler_consistent():
    g, st0, cls = open_case(16)
    eq = boundary_form_equivalence(Model("euler", 2), st0, SRC, cls)
    assert eq.consistent
    assert "euler" in eq.groups and len(eq.groups["euler"]) >= 3
    assert eq.max_discrepancy <= 1e-10 * eq.scale


def test_boundary_forms_closed_zero():
    g = box(16)
    eq = boundary_form_equivalence(Model("euler", 2), wall_state(g), closures=closed(g))
    assert all(abs(v) < 1e-13 for forms in eq.groups.values() for v in forms.values())


def test_boundary_forms_mhd_identity():
    g, st0, cls = open_case(16)
    x, y = g.mesh()
    B = np.stack([0.2 + 0.1 * np.cos(y), 0.1 * np.sin(x)])
    st = State(g, st0.u, st0.rho, st0.s, adv=B)
    eq = boundary_form_equivalence(Model("mhd", 2), st, closures=cls)
    assert "mhd" in eq.groups
    vals = list(eq.groups["mhd"].values())
    assert abs(vals[0]) > 1e-3
    assert eq.max_discrepancy <= 1e-10 * eq.scale


def test_open_budgets_converge():
    model = Model("euler", 2)
    res = {}
    for n in (16, 32, 64):
        g, st0, cls = open_case(n)
        for r in all_budgets(model, st0, SRC, cls):
            res.setdefault(r.quantity, []).append(abs(r.residual))
    for q, errs in res.items():
        if max(errs) < 1e-12:
            continue
        assert order(errs) > 1.8, q


def test_time_differenced_variant():
    errs = []
    model = Model("euler", 2)
    for n in (16, 32):
        g, st0, cls = open_case(n)
        m = time_differenced_budget("mass", model, st0, SRC, cls, dt=1e-3)
        assert abs(m.residual) < 1e-5
        e = time_differenced_budget("energy", model, st0, SRC, cls, dt=1e-3)
        assert e.passed
        errs.append(abs(e.residual))
    assert errs[1] < errs[0]
    with pytest.raises(BudgetError):
        time_differenced_budget("momentum", model, st0, SRC, cls)
