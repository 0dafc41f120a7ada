"""Bulk sources and per-patch boundary flux closures.

A closure does two things on its patch.  First it pins whichever boundary
traces it determines (``pins``), e.g. the full state for inflow or only u.n
for inviscid outflow.  Then, once the traces are known, it returns the flux
values J, j_rho, j_s (``evaluate_fluxes``).  All fluxes use the sign
convention of the balance laws: a positive j_rho adds mass through the face.
"""

from dataclasses import dataclass, field

import numpy as np

from .expr import Expression
from .grid import Field

MODES = ("closed", "inflow", "outflow_viscous", "outflow_inviscid", "free_open", "prescribed")


class ClosureError(ValueError):
    pass


def _as_callable(value, vector=False):
    """Constant, list or expression string(s) -> callable of (coords, t)."""
    if callable(value):
        return value
    if vector:
        items = list(value)
        parts = [_as_callable(v) for v in items]
        return lambda coords, t: np.stack([p(coords, t) for p in parts])
    if isinstance(value, str):
        ex = Expression(value)
        return lambda coords, t: ex(coords[0], coords[1] if len(coords) > 1 else 0.0, t)
    c = float(value)
    return lambda coords, t: np.full(np.shape(coords[0]), c)


def _patch_coords(grid, patch):
    return tuple(c[patch.start:patch.stop] for c in grid.face_coords(patch.side))


@dataclass(frozen=True, eq=False)
class FluxClosure:
    patch: object
    mode: str
    params: dict = field(default_factory=dict)

    @property
    def normal(self):
        return self.patch.axis, self.patch.sign

    def data(self, grid, name, t, vector=False):
        fn = self.params[name]
        coords = _patch_coords(grid, self.patch)
        out = np.asarray(fn(coords, t), float)
        shape = (grid.dim, self.patch.nfaces) if vector else (self.patch.nfaces,)
        return np.broadcast_to(out, shape).copy()

    def data_list(self, grid, name, t, count):
        """Per-component scalars (e.g. rho0 for each species)."""
        fns = self.params[name]
        coords = _patch_coords(grid, self.patch)
        return np.stack([np.broadcast_to(f(coords, t), (self.patch.nfaces,)) for f in fns])[:count]


@dataclass
class FluxValues:
    """Face fluxes on one patch; arrays end with the face axis."""

    J: np.ndarray
    j_rho: np.ndarray
    j_s: np.ndarray
    j_adv: np.ndarray = None


def make_flux_spec(mode, params, patch, grid):
    """Validate a closure for one patch.

    Parameters
    ----------
    mode : str
        closed | inflow | outflow_viscous | outflow_inviscid | free_open | prescribed
    params : dict
        inflow: u0 (vector), rho0 (scalar or list per component), s0;
        outflow_viscous: u0, T0; outflow_inviscid: nu0; prescribed: J,
        j_rho (scalar or list), j_s.  Any value may be a number or an
        expression string in (x, y, t).
    patch : Patch or str
    grid : Grid
    """
    if mode not in MODES:
        raise ClosureError(f"unknown closure mode {mode!r}")
    if isinstance(patch, str):
        if patch not in grid.patches:
            raise ClosureError(f"unknown patch {patch!r}")
        patch = grid.patches[patch]
    params = dict(params or {})
    need = {
        "closed": (),
        "inflow": ("u0", "rho0"),
        "outflow_viscous": ("u0", "T0"),
        "outflow_inviscid": ("nu0",),
        "free_open": (),
        "prescribed": ("J", "j_rho"),
    }[mode]
    for key in need:
        if key not in params:
            raise ClosureError(f"{mode} closure on {patch.name!r} needs parameter {key!r}")
    compiled = {}
    for key, val in params.items():
        if key in ("u0", "J"):
            if np.ndim(val) == 0 and not callable(val):
                raise ClosureError(f"{key} must be a vector")
            if not callable(val) and len(val) != grid.dim:
                raise ClosureError(f"{key} needs {grid.dim} components")
            compiled[key] = _as_callable(val, vector=True)
        elif key in ("rho0", "j_rho", "adv0"):
            vals = val if isinstance(val, (list, tuple)) else [val]
            if key == "adv0":
                compiled[key] = np.asarray(val, float)
            else:
                compiled[key] = [_as_callable(v) for v in vals]
        elif key in ("s0", "T0", "nu0", "j_s"):
            compiled[key] = _as_callable(val)
        else:
            raise ClosureError(f"unknown parameter {key!r} for {mode} closure")
    closure = FluxClosure(patch, mode, compiled)

    axis, sign = patch.axis, patch.sign
    if mode in ("inflow", "outflow_viscous"):
        un = sign * closure.data(grid, "u0", 0.0, vector=True)[axis]
        if mode == "inflow":
            bad = np.flatnonzero(~(un < 0))
            if bad.size:
                raise ClosureError(
                    f"inflow on {patch.name!r} needs u0.n < 0; violated at face {int(bad[0])}"
                )
        else:
            bad = np.flatnonzero(~(un > 0))
            if bad.size:
                raise ClosureError(
                    f"outflow_viscous on {patch.name!r} needs u0.n > 0; violated at face {int(bad[0])}"
                )
    if mode == "outflow_inviscid":
        nu = closure.data(grid, "nu0", 0.0)
        bad = np.flatnonzero(~(nu > 0))
        if bad.size:
            raise ClosureError(f"nu0 must be positive on {patch.name!r}; face {int(bad[0])}")
    if mode == "outflow_viscous":
        T0 = closure.data(grid, "T0", 0.0)
        if np.any(~(T0 > 0)):
            raise ClosureError("T0 must be positive")
    return closure


def _normal_of(vec, axis, sign):
    return sign * vec[axis]


def stress_normal(model, traces, axis, sign):
    """Boundary stress contribution sigma.n appearing in the momentum row.

    Returns (sigma_adv . n, sigma_ext . n); either may be zero.
    """
    from .dynamics import advected_stress

    dim = model.dim
    zero = np.zeros((dim,) + np.shape(traces["s"]))
    s_adv = zero
    if model.has_adv:
        sig = advected_stress(model, traces["adv"])
        s_adv = sign * sig[axis]
    s_ext = zero
    if "sigma" in traces["aux"]:
        s_ext = sign * traces["aux"]["sigma"][axis]
    return s_adv, s_ext


def pins(closure, model, grid, free, t):
    """Trace constraints imposed by a closure.

    ``free`` holds the unconstrained traces on the patch (u, rho, s, aux).
    Returns a dict with optional entries ``u`` (dim, nf), ``rho`` (K, nf),
    ``s`` (nf); NaN marks components that stay free.
    """
    axis, sign = closure.normal
    nf = closure.patch.nfaces
    K = model.ncomp
    nan_u = np.full((grid.dim, nf), np.nan)
    out = {}
    mode = closure.mode
    if mode == "closed":
        nan_u[axis] = 0.0
        out["u"] = nan_u
    elif mode == "inflow":
        out["u"] = closure.data(grid, "u0", t, vector=True)
        out["rho"] = closure.data_list(grid, "rho0", t, K)
        if "s0" in closure.params:
            out["s"] = closure.data(grid, "s0", t)
    elif mode == "outflow_viscous":
        out["u"] = closure.data(grid, "u0", t, vector=True)
        if model.eq is not None and model.eq.family != "barotropic" and model.base != "shallow_water_rotating":
            rho_b = np.sum(free["rho"], axis=0)
            out["s"] = model.eq.entropy_from_temperature(rho_b, closure.data(grid, "T0", t))
    elif mode == "outflow_inviscid":
        nan_u[axis] = sign * closure.data(grid, "nu0", t)
        out["u"] = nan_u
    elif mode == "prescribed":
        J = closure.data(grid, "J", t, vector=True)
        j = closure.data_list(grid, "j_rho", t, K)
        jt = np.sum(j, axis=0)
        s_adv, s_ext = stress_normal(model, free, axis, sign)
        Jm = J + s_adv - s_ext
        if np.all(jt == 0):
            if np.any(np.abs(Jm) > 0):
                raise ClosureError(
                    f"incompatible fluxes on {closure.patch.name!r}: J != 0 with j_rho = 0"
                )
            nan_u[axis] = 0.0
            out["u"] = nan_u
        else:
            if np.any(jt == 0) or np.any(_normal_of(Jm, axis, sign) == 0):
                raise ClosureError(
                    f"incompatible fluxes on {closure.patch.name!r}: J.n must be nonzero where j_rho != 0"
                )
            u_b = Jm / jt - free["aux"]["R"]
            un = _normal_of(u_b, axis, sign)
            out["u"] = u_b
            out["rho"] = -j / un
            if "j_s" in closure.params:
                out["s"] = -closure.data(grid, "j_s", t) / un
    return out


def evaluate_fluxes(closure, model, traces, t=0.0, grid=None):
    """Flux values on the closure's patch from the boundary traces.

    ``traces`` is a dict of face arrays on the patch: u, rho, s, adv, m, aux;
    alternatively a State, whose traces are then computed by the dynamics
    ghost fill with this closure alone on the patch.
    """
    from .models import State

    if isinstance(traces, State):
        from .dynamics import patch_traces

        grid = traces.grid
        traces = patch_traces(model, traces, {closure.patch.name: closure}, closure.patch.name)
    axis, sign = closure.normal
    nf = closure.patch.nfaces
    K = model.ncomp
    dim = model.dim
    u_b, rho_b, s_b = traces["u"], traces["rho"], traces["s"]
    adv_b = traces.get("adv")
    mode = closure.mode
    zeros = FluxValues(
        J=np.zeros((dim, nf)),
        j_rho=np.zeros((K, nf)),
        j_s=np.zeros(nf),
        j_adv=None if adv_b is None else np.zeros_like(adv_b),
    )
    s_adv, s_ext = stress_normal(model, traces, axis, sign)

    if mode == "closed":
        # the only J compatible with u.n = 0 in the momentum row
        zeros.J = s_ext - s_adv
        return zeros
    if mode == "prescribed":
        g = grid if grid is not None else traces["grid"]
        j_s = closure.data(g, "j_s", t) if "j_s" in closure.params else np.zeros(nf)
        return FluxValues(
            J=closure.data(g, "J", t, vector=True),
            j_rho=closure.data_list(g, "j_rho", t, K),
            j_s=j_s,
            j_adv=None if adv_b is None else -adv_b * _normal_of(u_b, axis, sign),
        )

    if mode == "inflow":
        g = grid if grid is not None else traces["grid"]
        u0 = closure.data(g, "u0", t, vector=True)
        rho0 = closure.data_list(g, "rho0", t, K)
        s0 = closure.data(g, "s0", t) if "s0" in closure.params else s_b
        U = _normal_of(u0, axis, sign)
        m0 = model.momentum(u0, rho0, traces["aux"])
        adv0 = adv_b
        if "adv0" in closure.params and adv_b is not None:
            adv0 = np.broadcast_to(
                closure.params["adv0"].reshape(closure.params["adv0"].shape + (1,)), adv_b.shape
            )
        return FluxValues(
            J=-U * m0 - s_adv + s_ext,
            j_rho=-rho0 * U,
            j_s=-s0 * U,
            j_adv=None if adv_b is None else -adv0 * U,
        )
    if mode == "outflow_viscous":
        g = grid if grid is not None else traces["grid"]
        u0 = closure.data(g, "u0", t, vector=True)
        U = _normal_of(u0, axis, sign)
        if model.eq is not None and model.eq.family != "barotropic" and model.base != "shallow_water_rotating":
            s_T = model.eq.entropy_from_temperature(np.sum(rho_b, axis=0), closure.data(g, "T0", t))
        else:
            s_T = s_b
        return FluxValues(
            J=-U * model.momentum(u0, rho_b, traces["aux"]) - s_adv + s_ext,
            j_rho=-rho_b * U,
            j_s=-s_T * U,
            j_adv=None if adv_b is None else -adv_b * U,
        )
    if mode == "outflow_inviscid":
        g = grid if grid is not None else traces["grid"]
        nu = closure.data(g, "nu0", t)
        return FluxValues(
            J=-nu * traces["m"] - s_adv + s_ext,
            j_rho=-rho_b * nu,
            j_s=-s_b * nu,
            j_adv=None if adv_b is None else -adv_b * nu,
        )
    if mode == "free_open":
        # dh/dm = u, so (dh/dm . n) = u.n on the trace
        U = _normal_of(u_b, axis, sign)
        if np.any(~(np.sum(rho_b, axis=0) >= model.floor)):
            raise ClosureError("free_open closure met a degenerate boundary density")
        return FluxValues(
            J=-U * traces["m"] - s_adv + s_ext,
            j_rho=-rho_b * U,
            j_s=-s_b * U,
            j_adv=None if adv_b is None else -adv_b * U,
        )
    raise ClosureError(f"unhandled closure mode {mode!r}")


# ---------------------------------------------------------------------------
# Bulk sources


@dataclass(frozen=True, eq=False)
class BulkSources:
    """Callables of (coords, t) for b (vector), theta_rho (per component),
    theta_s and an optional theta_adv tensor."""

    b: object = None
    theta_rho: tuple = ()
    theta_s: object = None
    theta_adv: object = None


@dataclass
class BulkFields:
    b: np.ndarray
    theta_rho: np.ndarray
    theta_s: np.ndarray
    theta_adv: np.ndarray = None


def bulk_from_config(cfg, dim):
    """``bulk_sources`` block: b (list), theta_rho (scalar or list), theta_s."""
    cfg = dict(cfg or {})
    b = _as_callable(cfg.pop("b"), vector=True) if "b" in cfg else None
    th = cfg.pop("theta_rho", None)
    theta_rho = () if th is None else tuple(
        _as_callable(v) for v in (th if isinstance(th, (list, tuple)) else [th])
    )
    theta_s = _as_callable(cfg.pop("theta_s")) if "theta_s" in cfg else None
    theta_adv = None
    if "theta_adv" in cfg:
        theta_adv = np.asarray(cfg.pop("theta_adv"), float)
    if cfg:
        raise ClosureError(f"unknown bulk_sources keys: {sorted(cfg)}")
    return BulkSources(b=b, theta_rho=theta_rho, theta_s=theta_s, theta_adv=theta_adv)


def evaluate_bulk(sources, grid, model, t=0.0, state=None):
    """Realise bulk sources as arrays on the grid."""
    coords = grid.mesh()
    shape = grid.shape
    sources = sources or BulkSources()
    b = np.zeros((grid.dim,) + shape)
    if sources.b is not None:
        b = np.broadcast_to(np.asarray(sources.b(coords, t), float), b.shape).copy()
    th = np.zeros((model.ncomp,) + shape)
    for k, fn in enumerate(sources.theta_rho[: model.ncomp]):
        th[k] = np.broadcast_to(fn(coords, t), shape)
    ts = np.zeros(shape)
    if sources.theta_s is not None:
        ts = np.broadcast_to(sources.theta_s(coords, t), shape).copy()
    ta = None
    if model.has_adv:
        nidx = sum(model.adv_rank)
        ta = np.zeros((grid.dim,) * nidx + shape)
        if sources.theta_adv is not None:
            arr = np.asarray(sources.theta_adv, float)
            if callable(sources.theta_adv):
                arr = np.asarray(sources.theta_adv(coords, t), float)
            ta = np.broadcast_to(arr.reshape(arr.shape + (1,) * (ta.ndim - arr.ndim)), ta.shape).copy()
    for name, arr in (("b", b), ("theta_rho", th), ("theta_s", ts)):
        if not np.all(np.isfinite(arr)):
            raise ClosureError(f"bulk source {name} evaluated to non-finite values")
    return BulkFields(b=b, theta_rho=th, theta_s=ts, theta_adv=ta)


def bulk_field(bulk, grid, name):
    """Wrap a realised bulk source as a density Field."""
    arr = getattr(bulk, name)
    if name == "b":
        return Field(grid, arr, (0, 1), "density")
    if name == "theta_rho":
        return Field(grid, arr[0], (0, 0), "density")
    return Field(grid, arr, (0, 0), "density")


@dataclass(frozen=True, eq=False)
class SourceSet:
    """Bulk sources together with one flux closure per boundary patch."""

    bulk: BulkSources = None
    closures: dict = field(default_factory=dict)


def split_sources(sources, closures=None):
    """Normalise (sources, closures) to (BulkSources, closures dict)."""
    if isinstance(sources, SourceSet):
        cl = dict(sources.closures)
        cl.update(closures or {})
        return sources.bulk or BulkSources(), cl
    return sources or BulkSources(), dict(closures or {})
