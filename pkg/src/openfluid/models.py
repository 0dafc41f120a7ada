"""Model catalogue: Lagrangian densities, variational derivatives and Legendre pairs.

Every family shares the kinetic part 1/2 rho|u|^2 + rho R.u (R = 0 unless a
rotation potential is set), so the momentum is m = rho (u + R) with rho the
total density.  The families differ in the potential part of the Lagrangian:

    euler                    -eps(rho, s)
    euler_rotating_gravity   -eps(rho, s) - rho phi
    shallow_water_rotating   -1/2 g (h + Z)^2              (h stored as rho)
    multicomponent_euler     -eps(sum_k w_k rho_k, s)
    tensor_advected          -eps(rho, s) - a/2 |pi|^2
    mhd                      -eps(rho, s) - 1/2 |B|^2
    euler_korteweg           -eps(rho, s) - lambda/2 |grad rho|^2

``with_boundary_stress`` wraps any of the above and adds a prescribed
external stress sigma(x, t) to the momentum equation.
"""

from dataclasses import dataclass, replace

import numpy as np

from .thermo import DegenerateStateError, RHO_FLOOR, StateEquation, state_equation_from_config
from .grid import Field, curl2d

FAMILIES = (
    "euler",
    "euler_rotating_gravity",
    "shallow_water_rotating",
    "multicomponent_euler",
    "tensor_advected",
    "mhd",
    "euler_korteweg",
    "with_boundary_stress",
)


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class State:
    """Eulerian unknowns at one instant.

    u : (dim,) + shape velocity
    rho : (ncomp,) + shape densities (water depth for shallow water)
    s : shape entropy density
    adv : optional advected tensor, (dim,)*(p+q) + shape
    """

    grid: object
    u: np.ndarray
    rho: np.ndarray
    s: np.ndarray
    adv: np.ndarray = None
    t: float = 0.0

    def __post_init__(self):
        g = self.grid
        u = np.asarray(self.u, float)
        rho = np.asarray(self.rho, float)
        if rho.shape == g.shape:
            rho = rho[None]
        s = np.asarray(self.s, float) if self.s is not None else np.zeros(g.shape)
        if u.shape != (g.dim,) + g.shape:
            raise ModelError(f"u has shape {u.shape}, expected {(g.dim,) + g.shape}")
        if rho.shape[1:] != g.shape:
            raise ModelError("rho shape does not match the grid")
        if s.shape != g.shape:
            raise ModelError("s shape does not match the grid")
        arrays = {"u": u, "rho": rho, "s": s}
        if self.adv is not None:
            arrays["adv"] = np.asarray(self.adv, float)
        for name, arr in arrays.items():
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite values in {name}")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class VarDerivs:
    dl_du: np.ndarray
    dl_drho: np.ndarray
    dl_ds: np.ndarray
    dl_dadv: np.ndarray = None
    dl_dgradrho: np.ndarray = None


def _zero_vector(dim):
    def fn(*coords):
        return np.zeros((dim,) + np.shape(coords[0]))

    return fn


def _zero_scalar(*coords):
    return np.zeros(np.shape(coords[0]))


@dataclass(frozen=True, eq=False)
class Model:
    """One member of the model catalogue.

    R, phi, Z are callables of the coordinates; ``stress`` is a callable of
    (coords, t) returning a (dim, dim) + shape array indexed sigma[c, d].
    """

    family: str
    dim: int
    eq: StateEquation = None
    R: object = None
    phi: object = None
    Z: object = None
    g_const: float = 9.81
    weights: tuple = (1.0,)
    adv_rank: tuple = None
    adv_kind: str = "density"
    adv_coeff: float = 1.0
    lam: float = 0.0
    stress: object = None
    base_family: str = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown model family {self.family!r}")
        base = self.base_family or self.family
        if self.family == "with_boundary_stress":
            if self.base_family is None or self.base_family == "with_boundary_stress":
                raise ModelError("with_boundary_stress needs a base family")
            if self.stress is None:
                raise ModelError("with_boundary_stress needs a stress field")
        else:
            object.__setattr__(self, "base_family", self.family)
        if base != "shallow_water_rotating" and self.eq is None:
            object.__setattr__(self, "eq", StateEquation())
        if self.R is None:
            object.__setattr__(self, "R", _zero_vector(self.dim))
        if self.phi is None:
            object.__setattr__(self, "phi", _zero_scalar)
        if self.Z is None:
            object.__setattr__(self, "Z", _zero_scalar)
        if base == "mhd":
            if self.dim != 2:
                raise ModelError("mhd needs a 2D grid")
            object.__setattr__(self, "adv_rank", (1, 0))
            object.__setattr__(self, "adv_kind", "density")
            object.__setattr__(self, "adv_coeff", 1.0)
        if base == "tensor_advected" and self.adv_rank is None:
            raise ModelError("tensor_advected needs adv_rank")
        if base not in ("tensor_advected", "mhd"):
            object.__setattr__(self, "adv_rank", None)
        if base != "multicomponent_euler":
            object.__setattr__(self, "weights", (1.0,))
        if base != "euler_korteweg":
            object.__setattr__(self, "lam", 0.0)

    # -- structure ---------------------------------------------------------

    @property
    def base(self):
        return self.base_family

    @property
    def ncomp(self):
        return len(self.weights)

    @property
    def has_adv(self):
        return self.adv_rank is not None

    @property
    def korteweg(self):
        return self.base == "euler_korteweg"

    @property
    def rotating(self):
        return self.base in ("euler_rotating_gravity", "shallow_water_rotating")

    @property
    def floor(self):
        return self.eq.rho_floor if self.eq is not None else RHO_FLOOR

    def aux(self, coords, t=0.0):
        """R, phi, Z (and sigma if present) sampled at the given coordinates."""
        out = {
            "R": np.asarray(self.R(*coords), float),
            "phi": np.asarray(self.phi(*coords), float),
            "Z": np.asarray(self.Z(*coords), float),
        }
        shape = np.shape(coords[0])
        out["R"] = np.broadcast_to(out["R"], (self.dim,) + shape)
        out["phi"] = np.broadcast_to(out["phi"], shape)
        out["Z"] = np.broadcast_to(out["Z"], shape)
        if self.stress is not None:
            out["sigma"] = np.broadcast_to(
                np.asarray(self.stress(coords, t), float), (self.dim, self.dim) + shape
            )
        return out

    def rho_total(self, rho):
        rho = np.asarray(rho, float)
        tot = np.sum(rho, axis=0)
        if np.any(~(tot >= self.floor)) or np.any(~(rho >= 0.0)):
            raise DegenerateStateError(
                f"density {float(np.min(tot)):.3e} below floor {self.floor:.1e}"
            )
        return tot

    # -- potential parts -----------------------------------------------------

    def internal(self, rho, s, aux):
        """(eps, d eps / d rho_k stacked, d eps / d s)."""
        rho = np.asarray(rho, float)
        rt = self.rho_total(rho)
        if self.base == "shallow_water_rotating":
            eta = rt + aux["Z"]
            e = 0.5 * self.g_const * eta ** 2
            return e, (self.g_const * eta)[None], np.zeros_like(e)
        if self.base == "multicomponent_euler":
            w = np.asarray(self.weights).reshape((-1,) + (1,) * (rho.ndim - 1))
            rbar = np.sum(w * rho, axis=0)
            e, e_r, e_s = self.eq.derivatives(rbar, s)
            return e, w * e_r[None], e_s
        e, e_r, e_s = self.eq.derivatives(rt, s)
        return e, e_r[None], e_s

    def adv_energy(self, adv):
        if not self.has_adv or adv is None:
            return 0.0, None
        a = self.adv_coeff
        nidx = sum(self.adv_rank)
        return 0.5 * a * np.sum(adv ** 2, axis=tuple(range(nidx))), a * adv

    # -- Lagrangian side -----------------------------------------------------

    def momentum(self, u, rho, aux):
        """m = dl/du = rho_total (u + R)."""
        return self.rho_total(rho) * (np.asarray(u, float) + aux["R"])

    def velocity(self, m, rho, aux):
        """Inverse Legendre map u = m / rho_total - R."""
        return np.asarray(m, float) / self.rho_total(rho) - aux["R"]

    def lagrangian(self, u, rho, s, aux, adv=None, grad_rho=None):
        u = np.asarray(u, float)
        rt = self.rho_total(rho)
        e, _, _ = self.internal(rho, s, aux)
        ea, _ = self.adv_energy(adv)
        l = 0.5 * rt * np.sum(u * u, axis=0) + rt * np.sum(aux["R"] * u, axis=0) - e
        l = l - rt * aux["phi"] - ea
        if self.korteweg:
            l = l - 0.5 * self.lam * np.sum(grad_rho * grad_rho, axis=0)
        return l

    def derivs(self, u, rho, s, aux, adv=None, grad_rho=None):
        u = np.asarray(u, float)
        _, e_r, e_s = self.internal(rho, s, aux)
        kin = 0.5 * np.sum(u * u, axis=0) + np.sum(aux["R"] * u, axis=0) - aux["phi"]
        dl_drho = kin[None] - e_r
        _, dea = self.adv_energy(adv)
        return VarDerivs(
            dl_du=self.momentum(u, rho, aux),
            dl_drho=dl_drho,
            dl_ds=-e_s,
            dl_dadv=None if dea is None else -dea,
            dl_dgradrho=(-self.lam * grad_rho) if self.korteweg and grad_rho is not None else None,
        )

    def energy(self, u, rho, s, aux, adv=None, grad_rho=None):
        """e = dl/du . u - l."""
        m = self.momentum(u, rho, aux)
        return np.sum(m * u, axis=0) - self.lagrangian(u, rho, s, aux, adv, grad_rho)

    def energy_parts(self, u, rho, s, aux, adv=None, grad_rho=None):
        """Kinetic, internal and potential energy densities."""
        u = np.asarray(u, float)
        rt = self.rho_total(rho)
        e, _, _ = self.internal(rho, s, aux)
        kin = 0.5 * rt * np.sum(u * u, axis=0)
        if self.base == "shallow_water_rotating":
            return {"kinetic": kin, "internal": np.zeros_like(kin), "potential": e}
        ea, _ = self.adv_energy(adv)
        internal = e + ea
        if self.korteweg:
            internal = internal + 0.5 * self.lam * np.sum(grad_rho * grad_rho, axis=0)
        return {"kinetic": kin, "internal": internal, "potential": rt * aux["phi"]}

    # -- Hamiltonian side -----------------------------------------------------

    def hamiltonian(self, m, rho, s, aux, adv=None, grad_rho=None):
        """Return (h, dh/dm) with h = m.u - l and u the inverse Legendre map."""
        u = self.velocity(m, rho, aux)
        h = np.sum(np.asarray(m, float) * u, axis=0) - self.lagrangian(u, rho, s, aux, adv, grad_rho)
        return h, u

    def max_speed(self, u, rho, s, adv=None, dx=1.0):
        """|u| + signal speed, for the CFL bound."""
        rt = self.rho_total(rho)
        speed = np.sqrt(np.sum(np.asarray(u) ** 2, axis=0))
        if self.base == "shallow_water_rotating":
            c = np.sqrt(self.g_const * rt)
        elif self.base == "multicomponent_euler":
            w = np.asarray(self.weights).reshape((-1,) + (1,) * (np.ndim(rho) - 1))
            c = self.eq.sound_speed(np.sum(w * rho, axis=0), s) * np.sqrt(max(self.weights))
        else:
            c = self.eq.sound_speed(rt, s)
        if self.has_adv and adv is not None:
            c = np.sqrt(c ** 2 + self.adv_coeff * np.sum(adv ** 2, axis=tuple(range(sum(self.adv_rank)))) / rt)
        if self.korteweg:
            c = c + 2.0 * np.sqrt(self.lam * rt) / dx
        return float(np.max(speed + c))


def hamiltonian_closed_form(model, m, rho, s, aux):
    """Printed closed forms of the Hamiltonian density, independent of m.u - l."""
    m = np.asarray(m, float)
    rt = np.sum(np.asarray(rho, float), axis=0)
    if model.base == "euler":
        return np.sum(m * m, axis=0) / (2 * rt) + model.eq.eps(rt, s)
    if model.base == "euler_rotating_gravity":
        w = m - rt * aux["R"]
        return np.sum(w * w, axis=0) / (2 * rt) + model.eq.eps(rt, s) + rt * aux["phi"]
    if model.base == "shallow_water_rotating":
        w = m - rt * aux["R"]
        return np.sum(w * w, axis=0) / (2 * rt) + 0.5 * model.g_const * (rt + aux["Z"]) ** 2
    raise ModelError(f"no closed-form Hamiltonian listed for {model.base}")


# ---------------------------------------------------------------------------
# Field-level operations


def _grid_aux(model, grid, t=0.0):
    return model.aux(grid.mesh(), t)


def _grad_rho(model, state):
    if not model.korteweg:
        return None
    from .grid import gradient

    return gradient(Field(state.grid, np.sum(state.rho, axis=0))).values


def momentum_from_velocity(model, state):
    """1-form density m = dl/du."""
    aux = _grid_aux(model, state.grid, state.t)
    return Field(state.grid, model.momentum(state.u, state.rho, aux), (0, 1), "density")


def velocity_from_momentum(model, m, state):
    """Vector field u from m and the densities of ``state``."""
    aux = _grid_aux(model, state.grid, state.t)
    vals = m.values if isinstance(m, Field) else m
    return Field(state.grid, model.velocity(vals, state.rho, aux), (1, 0), "function")


def variational_derivatives(model, state):
    aux = _grid_aux(model, state.grid, state.t)
    return model.derivs(state.u, state.rho, state.s, aux, state.adv, _grad_rho(model, state))


def energy_density(model, state):
    aux = _grid_aux(model, state.grid, state.t)
    e = model.energy(state.u, state.rho, state.s, aux, state.adv, _grad_rho(model, state))
    return Field(state.grid, e, (0, 0), "density")


def hamiltonian_density(model, m, state):
    """(h as a density Field, dh/dm as a vector Field)."""
    aux = _grid_aux(model, state.grid, state.t)
    vals = m.values if isinstance(m, Field) else m
    h, dh = model.hamiltonian(vals, state.rho, state.s, aux, state.adv, _grad_rho(model, state))
    return Field(state.grid, h, (0, 0), "density"), Field(state.grid, dh, (1, 0), "function")


def rotation_rate(model, grid):
    """omega = curl(R) / 2 on the grid (2D)."""
    R = Field(grid, model.aux(grid.mesh())["R"], (0, 1), "function")
    return 0.5 * curl2d(R).values


def model_from_config(cfg, dim):
    """Build a Model from the ``model`` and ``state_equation`` config blocks.

    ``cfg`` keys: family, base (for with_boundary_stress), R (list of
    expressions), phi, Z, g_const, weights, adv ({rank, kind, coeff}),
    lambda, sigma (dim x dim nested list of expressions in x, y, t),
    state_equation.
    """
    from .expr import Expression, compile_vector

    cfg = dict(cfg)
    family = cfg.pop("family", "euler")
    kw = {"family": family, "dim": dim}
    if "state_equation" in cfg:
        kw["eq"] = state_equation_from_config(cfg.pop("state_equation"))
    if "base" in cfg:
        kw["base_family"] = cfg.pop("base")
    if "R" in cfg:
        R = compile_vector(cfg.pop("R"))
        if len(R.exprs) != dim:
            raise ModelError("R needs one expression per axis")
        kw["R"] = lambda *c: R(*c)
    for key in ("phi", "Z"):
        if key in cfg:
            ex = Expression(cfg.pop(key))
            kw[key] = (lambda ex: lambda *c: ex(*c))(ex)
    if "g_const" in cfg:
        kw["g_const"] = float(cfg.pop("g_const"))
    if "weights" in cfg:
        kw["weights"] = tuple(float(w) for w in cfg.pop("weights"))
    if "lambda" in cfg:
        kw["lam"] = float(cfg.pop("lambda"))
    if "adv" in cfg:
        adv = dict(cfg.pop("adv"))
        kw["adv_rank"] = tuple(adv.get("rank", (1, 0)))
        kw["adv_kind"] = adv.get("kind", "density")
        kw["adv_coeff"] = float(adv.get("coeff", 1.0))
    if "sigma" in cfg:
        rows = [[Expression(e) for e in row] for row in cfg.pop("sigma")]
        if len(rows) != dim or any(len(r) != dim for r in rows):
            raise ModelError("sigma needs dim x dim expressions")

        def stress(coords, t, rows=rows):
            x = coords[0]
            y = coords[1] if len(coords) > 1 else 0.0
            return np.stack([np.stack([e(x, y, t) for e in row]) for row in rows])

        kw["stress"] = stress
    if cfg:
        raise ModelError(f"unknown model keys: {sorted(cfg)}")
    return Model(**kw)
