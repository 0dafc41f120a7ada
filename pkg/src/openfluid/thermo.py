"""State equations eps(rho, s) and derived thermodynamic quantities."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

RHO_FLOOR = 1e-10


class DegenerateStateError(ValueError):
    """Density below the admissible floor."""


@dataclass(frozen=True)
class StateEquation:
    """Energy density as a function of mass and entropy densities.

    Families
    --------
    barotropic : eps = kappa_b * rho**gamma (no entropy dependence)
    ideal_gas : eps = c_v rho T with
        T = T_r (rho/rho_r)**(gamma-1) exp((s/rho - sigma_r)/c_v)
    user_tabulated : eps given by a user callable ``eps_fn(rho, s)``;
        derivatives by central differences.
    """

    family: str = "ideal_gas"
    gamma: float = 1.4
    kappa_b: float = 1.0
    c_v: float = 1.0
    T_r: float = 1.0
    rho_r: float = 1.0
    sigma_r: float = 0.0
    rho_floor: float = RHO_FLOOR
    eps_fn: object = None

    def __post_init__(self):
        if self.family not in ("barotropic", "ideal_gas", "user_tabulated"):
            raise ValueError(f"unknown state-equation family {self.family!r}")
        if self.family != "user_tabulated" and not self.gamma > 1:
            raise ValueError("gamma must exceed 1")
        if self.family == "ideal_gas" and not self.c_v > 0:
            raise ValueError("c_v must be positive")
        if self.family == "user_tabulated" and self.eps_fn is None:
            raise ValueError("user_tabulated needs eps_fn")

    @property
    def R(self):
        return self.c_v * (self.gamma - 1.0)

    def check(self, rho):
        rho = np.asarray(rho, dtype=float)
        if np.any(~(rho >= self.rho_floor)):
            raise DegenerateStateError(
                f"density {float(np.min(rho)):.3e} below floor {self.rho_floor:.1e}"
            )
        return rho

    def temperature(self, rho, s):
        """T = d eps / d s."""
        rho = self.check(rho)
        s = np.asarray(s, dtype=float)
        if self.family == "barotropic":
            return np.zeros(np.broadcast(rho, s).shape)
        if self.family == "ideal_gas":
            return self.T_r * (rho / self.rho_r) ** (self.gamma - 1.0) * np.exp(
                (s / rho - self.sigma_r) / self.c_v
            )
        return self._fd(rho, s)[2]

    def eps(self, rho, s):
        rho = self.check(rho)
        s = np.asarray(s, dtype=float)
        if self.family == "barotropic":
            return self.kappa_b * rho ** self.gamma + 0.0 * s
        if self.family == "ideal_gas":
            return self.c_v * rho * self.temperature(rho, s)
        return np.asarray(self.eps_fn(rho, s), dtype=float)

    def derivatives(self, rho, s):
        """Return (eps, eps_rho, eps_s)."""
        rho = self.check(rho)
        s = np.asarray(s, dtype=float)
        if self.family == "barotropic":
            e = self.kappa_b * rho ** self.gamma + 0.0 * s
            return e, self.gamma * self.kappa_b * rho ** (self.gamma - 1.0) + 0.0 * s, 0.0 * e
        if self.family == "ideal_gas":
            T = self.temperature(rho, s)
            e = self.c_v * rho * T
            return e, self.gamma * self.c_v * T - s * T / rho, T
        return self._fd(rho, s)

    def _fd(self, rho, s):
        h_r = 1e-6 * np.maximum(np.abs(rho), 1.0)
        h_s = 1e-6 * np.maximum(np.abs(s), 1.0)
        f = lambda r, q: np.asarray(self.eps_fn(r, q), dtype=float)
        e = f(rho, s)
        e_r = (f(rho + h_r, s) - f(rho - h_r, s)) / (2 * h_r)
        e_s = (f(rho, s + h_s) - f(rho, s - h_s)) / (2 * h_s)
        return e, e_r, e_s

    def sound_speed(self, rho, s):
        """Adiabatic sound speed, used only for the CFL bound."""
        rho = self.check(rho)
        s = np.asarray(s, dtype=float)
        if self.family == "barotropic":
            return np.sqrt(self.gamma * (self.gamma - 1.0) * self.kappa_b * rho ** (self.gamma - 1.0))
        if self.family == "ideal_gas":
            return np.sqrt(self.gamma * self.R * self.temperature(rho, s))
        # dp/drho at fixed specific entropy, by differences
        sig = s / rho
        h = 1e-6 * np.maximum(rho, 1.0)
        dp = pressure(self, rho + h, sig * (rho + h)) - pressure(self, rho - h, sig * (rho - h))
        return np.sqrt(np.maximum(dp / (2 * h), 0.0))

    def entropy_from_temperature(self, rho, T0):
        """Solve T(rho, s) = T0 for s.

        Closed form for the ideal gas, bracketing root search otherwise.
        """
        rho = self.check(rho)
        T0 = np.asarray(T0, dtype=float)
        if self.family == "ideal_gas":
            if np.any(T0 <= 0):
                raise ValueError("temperature must be positive")
            ref = self.T_r * (rho / self.rho_r) ** (self.gamma - 1.0)
            return rho * (self.sigma_r + self.c_v * np.log(T0 / ref))
        if self.family == "barotropic":
            raise ValueError("barotropic state equation has no temperature to invert")
        rho_b, T_b = np.broadcast_arrays(rho, T0)
        out = np.empty(rho_b.shape)
        for idx in np.ndindex(rho_b.shape):
            r, t = float(rho_b[idx]), float(T_b[idx])
            g = lambda q: float(self.temperature(r, q)) - t
            lo, hi = -1.0, 1.0
            for _ in range(200):
                if g(lo) < 0 < g(hi):
                    break
                lo, hi = 2 * lo, 2 * hi
            else:
                raise ValueError(f"could not bracket entropy at rho={r}, T={t}")
            out[idx] = brentq(g, lo, hi, xtol=1e-12, rtol=1e-12)
        return out


@dataclass(frozen=True)
class ThermoPoint:
    p: np.ndarray
    T: np.ndarray
    g: np.ndarray
    h_enth: np.ndarray


def pressure(eq, rho, s):
    """p = eps_rho rho + eps_s s - eps."""
    e, e_r, e_s = eq.derivatives(rho, s)
    return e_r * rho + e_s * np.asarray(s, dtype=float) - e


def thermo_quantities(eq, rho, s):
    """Pressure, temperature, Gibbs potential and enthalpy at (rho, s)."""
    rho = eq.check(rho)
    s = np.asarray(s, dtype=float)
    e, e_r, e_s = eq.derivatives(rho, s)
    p = e_r * rho + e_s * s - e
    # g = (eps + p - sT)/rho equals eps_rho identically
    g = (e + p - s * e_s) / rho
    h = (e + p) / rho
    return ThermoPoint(p=p, T=e_s, g=g, h_enth=h)


def state_equation_from_config(cfg):
    """Build a StateEquation from the ``state_equation`` config block."""
    cfg = dict(cfg or {})
    allowed = {"family", "gamma", "kappa_b", "c_v", "T_r", "rho_r", "sigma_r", "rho_floor"}
    unknown = set(cfg) - allowed
    if unknown:
        raise ValueError(f"unknown state_equation keys: {sorted(unknown)}")
    return StateEquation(**cfg)
