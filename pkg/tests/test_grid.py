import numpy as np
import pytest
from hypothesis import given, strategies as st

from openfluid.grid import (
    BoundaryField, Field, GridError, boundary_integral, boundary_trace, curl2d,
    divergence, field_from_function, gradient, kappa_hat, lie_derivative_momentum,
    lie_derivative_tensor, make_grid, normal_component, read_snapshot,
    triple_dot, volume_integral, write_snapshot,
)
from conftest import order


def box(n=8, dim=2):
    return make_grid(dim, [(0, 1)] * dim, [n] * dim)


# -- make_grid ---------------------------------------------------------------

def test_make_grid_1d():
    g = make_grid(1, [(0, 1)], [8])
    assert g.spacing == (0.125,)
    assert sum(g.nfaces(s) for s in g.sides) == 2
    assert g.normal("left")[0] == -1 and g.normal("right")[0] == 1


def test_make_grid_2d_faces():
    g = box(8)
    assert sum(g.nfaces(s) for s in g.sides) == 32
    assert all(g.face_area(s) == 0.125 for s in g.sides)
    perimeter = sum(g.nfaces(s) * g.face_area(s) for s in g.sides)
    assert perimeter == pytest.approx(4.0)


@pytest.mark.parametrize("cells", [(2, 8), (8, 3)])
def test_make_grid_too_few_cells(cells):
    with pytest.raises(GridError):
        make_grid(2, [(0, 1), (0, 1)], cells)


def test_make_grid_bad_extent():
    with pytest.raises(GridError):
        make_grid(1, [(1, 1)], [8])


def test_patches_must_partition():
    with pytest.raises(GridError):
        make_grid(1, [(0, 1)], [8], {"left": "left"})
    g = make_grid(2, [(0, 1), (0, 1)], [8, 8], {
        "left": "left", "right": "right", "top": "top",
        "b1": ("bottom", 0, 3), "b2": ("bottom", 3, 8)})
    assert g.patches["b2"].nfaces == 5
    with pytest.raises(GridError):
        make_grid(2, [(0, 1), (0, 1)], [8, 8], {
            "left": "left", "right": "right", "top": "top", "b1": ("bottom", 0, 3)})


# -- Field invariants --------------------------------------------------------

def test_field_shape_and_immutability():
    g = box(8)
    with pytest.raises(GridError):
        Field(g, np.zeros((8, 7)))
    f = Field(g, np.zeros((8, 8)))
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0
    with pytest.raises(GridError):
        f + Field(g, np.zeros((8, 8)), kind="density")


def test_boundary_field_length():
    g = box(8)
    with pytest.raises(GridError):
        BoundaryField(g, {"left": np.zeros(7)})


# -- differential operators --------------------------------------------------

def test_gradient_linear_exact():
    g = box(8)
    df = gradient(field_from_function(g, lambda x, y: 3 * x + 2 * y))
    assert np.allclose(df.values[0], 3, atol=1e-12)
    assert np.allclose(df.values[1], 2, atol=1e-12)
    assert np.allclose(gradient(Field(g, np.full((8, 8), 5.0))).values, 0)


def test_gradient_rank_error():
    g = box(8)
    with pytest.raises(GridError):
        gradient(field_from_function(g, lambda x, y: np.stack([x, y]), rank=(1, 0)))


def test_gradient_quadratic_interior_exact_boundary_second_order():
    errs = []
    for n in (16, 32, 64):
        g = make_grid(1, [(0, 1)], [n])
        d = gradient(field_from_function(g, lambda x: x ** 2)).values[0]
        exact = 2 * g.centers(0)
        assert np.allclose(d[1:-1], exact[1:-1], atol=1e-12)
        errs.append(np.max(np.abs(d - exact)))
    # one-sided boundary stencil is exact for quadratics too
    assert max(errs) < 1e-10 or order(errs) > 1.9


def test_gradient_converges_second_order():
    errs = []
    for n in (16, 32, 64):
        g = make_grid(1, [(0, 1)], [n])
        d = gradient(field_from_function(g, np.sin)).values[0]
        errs.append(np.max(np.abs(d - np.cos(g.centers(0)))))
    assert order(errs) > 1.9


def test_divergence_examples():
    g = box(8)
    v = field_from_function(g, lambda x, y: np.stack([x, y]), rank=(1, 0))
    assert np.allclose(divergence(v).values, 2)
    assert np.allclose(divergence(Field(g, np.ones((2, 8, 8)), (1, 0))).values, 0)
    sig = field_from_function(
        g, lambda x, y: np.stack([np.stack([x, 0 * x]), np.stack([0 * x, x])]), rank=(1, 1))
    d = divergence(sig)
    assert d.rank == (0, 1)
    assert np.allclose(d.values[0], 1) and np.allclose(d.values[1], 0)
    with pytest.raises(GridError):
        divergence(Field(g, np.zeros((8, 8))))


def test_curl2d_examples():
    g = box(8)
    v = field_from_function(g, lambda x, y: np.stack([-y, x]), rank=(1, 0))
    assert np.allclose(curl2d(v).values, 2)
    assert np.allclose(curl2d(Field(g, np.ones((2, 8, 8)), (1, 0))).values, 0)
    with pytest.raises(GridError):
        curl2d(Field(make_grid(1, [(0, 1)], [8]), np.zeros((1, 8)), (1, 0)))


def test_curl_of_gradient_vanishes():
    # the discrete difference operators commute, so the residual is round-off
    for n in (16, 32, 64):
        g = box(n)
        gf = gradient(field_from_function(g, lambda x, y: np.sin(2 * x) * np.cos(3 * y)))
        assert np.max(np.abs(curl2d(Field(g, gf.values, (1, 0))).values)) < 1e-9


# -- Lie derivatives ---------------------------------------------------------

def test_lie_momentum_examples():
    g = box(8)
    const_u = Field(g, np.ones((2, 8, 8)), (1, 0))
    const_m = Field(g, np.ones((2, 8, 8)), (0, 1), "density")
    assert np.allclose(lie_derivative_momentum(const_u, const_m).values, 0)

    u = field_from_function(g, lambda x, y: np.stack([1 + 0 * x, 0 * x]), rank=(1, 0))
    m = field_from_function(g, lambda x, y: np.stack([0 * x, x]), rank=(0, 1), kind="density")
    out = lie_derivative_momentum(u, m).values
    assert np.allclose(out[0], 0) and np.allclose(out[1], 1)

    u = field_from_function(g, lambda x, y: np.stack([x, 0 * x]), rank=(1, 0))
    m = field_from_function(g, lambda x, y: np.stack([1 + 0 * x, 0 * x]), rank=(0, 1),
                            kind="density")
    out = lie_derivative_momentum(u, m).values
    assert np.allclose(out[0], 2) and np.allclose(out[1], 0)


def test_lie_momentum_kind_mismatch():
    g = box(8)
    u = Field(g, np.ones((2, 8, 8)), (1, 0))
    m = Field(g, np.ones((2, 8, 8)), (0, 1), "function")
    with pytest.raises(GridError):
        lie_derivative_momentum(u, m)


def _smooth_u(g):
    return field_from_function(
        g, lambda x, y: np.stack([np.sin(x + 2 * y), x * y + np.cos(y)]), rank=(1, 0))


def test_lie_tensor_reduces_to_scalar_cases():
    g = box(16)
    u = _smooth_u(g)
    rho = field_from_function(g, lambda x, y: 1 + x * y ** 2, kind="density")
    flux = Field(g, u.values * rho.values, (1, 0), "density")
    assert np.allclose(lie_derivative_tensor(u, rho).values, divergence(flux).values,
                       atol=1e-2)
    f = field_from_function(g, lambda x, y: np.exp(x) * y)
    gf = gradient(f).values
    assert np.allclose(lie_derivative_tensor(u, f).values,
                       u.values[0] * gf[0] + u.values[1] * gf[1], atol=1e-13)


def test_lie_tensor_matches_momentum_path():
    g = box(16)
    u = _smooth_u(g)
    m = field_from_function(g, lambda x, y: np.stack([np.cos(x * y), x - y ** 2]),
                            rank=(0, 1), kind="density")
    assert np.allclose(lie_derivative_tensor(u, m).values,
                       lie_derivative_momentum(u, m).values, atol=1e-12)


def test_lie_tensor_rank_error():
    g = box(8)
    u = Field(g, np.ones((2, 8, 8)), (1, 0))
    with pytest.raises(GridError):
        lie_derivative_tensor(u, Field(g, np.zeros((2, 2, 2, 8, 8)), (2, 1)))


RANKS = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]


@pytest.mark.parametrize("p,q", RANKS)
@given(seed=st.integers(0, 2 ** 31))
def test_hat_duality_algebraic(p, q, seed):
    """pi ⸬ kappa_hat + kappa ⸬ pi_hat vanishes pointwise for dual ranks."""
    r = np.random.default_rng(seed)
    dim = 2
    k = r.normal(size=(dim,) * (p + q))
    pi = r.normal(size=(dim,) * (q + p))
    a = triple_dot(pi, kappa_hat(k, p, q, dim), q, p, dim)
    b = triple_dot(k, kappa_hat(pi, q, p, dim), p, q, dim)
    assert np.allclose(a + b, 0, atol=1e-12)


@pytest.mark.parametrize("p,q", RANKS)
def test_lie_duality_integral(p, q):
    """∫ £κ:π + £π:κ − div((π:κ)u) shrinks at second order."""
    errs = []
    for n in (32, 64, 128):
        g = box(n)
        x, y = g.mesh()
        u = _smooth_u(g)
        shape_k = (2,) * (p + q)
        comps_k = [np.sin(x + i) * np.cos(2 * y - i) + i for i in range(2 ** (p + q))]
        comps_p = [np.exp(0.3 * x * (i + 1)) + y ** 2 * i for i in range(2 ** (p + q))]
        kv = np.stack(comps_k).reshape(shape_k + g.shape)
        pv = np.stack(comps_p).reshape(shape_k[::-1] + g.shape)
        k = Field(g, kv, (p, q), "function")
        pi = Field(g, pv, (q, p), "density")
        lk = lie_derivative_tensor(u, k).values
        lp = lie_derivative_tensor(u, pi).values
        nidx = p + q
        perm = list(range(nidx))[::-1] + list(range(nidx, nidx + 2))
        pk = np.transpose(pv, perm) if nidx else pv
        pair = np.sum(pk * kv, axis=tuple(range(nidx))) if nidx else pk * kv
        integrand = (np.sum(lk * pk, axis=tuple(range(nidx))) if nidx else lk * pk) + (
            np.sum(np.transpose(lp, perm) * kv, axis=tuple(range(nidx))) if nidx else lp * kv)
        flux = Field(g, pair * u.values, (1, 0), "density")
        bnd = boundary_integral(normal_component(boundary_trace(flux)))
        res = volume_integral(Field(g, integrand, (0, 0), "density")) - bnd
        errs.append(abs(res))
    assert errs[-1] < 1e-2 and (max(errs) < 1e-11 or order(errs[-2:]) > 1.8)


# -- integrals and traces ----------------------------------------------------

def test_volume_integral_examples():
    g = box(8)
    assert volume_integral(Field(g, np.ones((8, 8)), kind="density")) == pytest.approx(1.0)
    g1 = make_grid(1, [(0, 1)], [8])
    assert volume_integral(field_from_function(g1, lambda x: x, kind="density")) == 0.5
    with pytest.raises(GridError):
        volume_integral(Field(g, np.ones((8, 8))))


def test_volume_integral_quadratic_order():
    errs = []
    for n in (8, 16, 32):
        g1 = make_grid(1, [(0, 1)], [n])
        errs.append(abs(volume_integral(
            field_from_function(g1, lambda x: x ** 2, kind="density")) - 1 / 3))
    assert order(errs) == pytest.approx(2.0, abs=0.05)


def test_boundary_integral_examples():
    g = box(8)
    one = boundary_trace(Field(g, np.ones((8, 8))))
    assert boundary_integral(one) == pytest.approx(4.0)
    ex = boundary_trace(Field(g, np.stack([np.ones((8, 8)), np.zeros((8, 8))]), (1, 0)))
    assert boundary_integral(normal_component(ex)) == pytest.approx(0.0, abs=1e-14)
    xr = boundary_trace(field_from_function(g, lambda x, y: x), "right")
    assert boundary_integral(xr) == pytest.approx(1.0)
    with pytest.raises(GridError):
        boundary_integral(BoundaryField(g, {}))


def test_trace_examples():
    g = box(8)
    tr = boundary_trace(field_from_function(g, lambda x, y: 2 * x - y))
    fx, fy = g.face_coords("bottom")
    assert np.allclose(tr.data["bottom"], 2 * fx - fy)
    fx, fy = g.face_coords("right")
    assert np.allclose(tr.data["right"], 2 * fx - fy)
    c = boundary_trace(Field(g, np.full((8, 8), 3.0)))
    assert all(np.allclose(v, 3.0) for v in c.data.values())


def test_trace_quadratic_second_order():
    errs = []
    for n in (8, 16, 32):
        g1 = make_grid(1, [(0, 1)], [n])
        tr = boundary_trace(field_from_function(g1, lambda x: np.exp(x)))
        errs.append(abs(tr.data["right"][0] - np.e))
    assert order(errs) > 1.9


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), c=st.floats(-3, 3), d=st.floats(-3, 3))
def test_divergence_theorem_linear_exact(a, b, c, d):
    g = box(8)
    v = field_from_function(g, lambda x, y: np.stack([a * x + b * y, c * x + d * y]),
                            rank=(1, 0), kind="density")
    vol = volume_integral(divergence(v))
    bnd = boundary_integral(normal_component(boundary_trace(v)))
    assert vol == pytest.approx(bnd, abs=1e-12)


def test_divergence_theorem_smooth_second_order():
    errs = []
    for n in (16, 32, 64):
        g = box(n)
        v = field_from_function(g, lambda x, y: np.stack([np.sin(3 * x * y), np.exp(x - y)]),
                                rank=(1, 0), kind="density")
        errs.append(abs(volume_integral(divergence(v))
                        - boundary_integral(normal_component(boundary_trace(v)))))
    assert order(errs) > 1.8


def test_transport_theorem():
    errs = []
    for n in (32, 64, 128):
        g = box(n)
        u = _smooth_u(g)
        rho = field_from_function(g, lambda x, y: 1 + 0.5 * np.sin(x * y), kind="density")
        flux = Field(g, rho.values * u.values, (1, 0), "density")
        errs.append(abs(volume_integral(lie_derivative_tensor(u, rho))
                        - boundary_integral(normal_component(boundary_trace(flux)))))
    assert order(errs[-2:]) > 1.8


def test_snapshot_roundtrip(tmp_path):
    g = box(4)
    x, y = g.mesh()
    path = write_snapshot(str(tmp_path / "s.csv"), g, {"rho": x + y}, binary=True)
    header, table = read_snapshot(path)
    assert header == ["x", "y", "rho"]
    assert np.array_equal(table[:, 2], (x + y).ravel())
    raw = np.fromfile(str(tmp_path / "s.bin"), dtype="<f8").reshape(-1, 3)
    assert np.array_equal(raw, table)
