"""Macroscopic flux of the two-lane process and the entropy-shock classifier.

The flux depends on the rates only through the lane drifts ``gamma0, gamma1`` and the
vertical ratio ``r = q/p``. With ``k = (r-1)/(r+1)`` and ``psi = 1 + k^2 rho (rho-2)``,

    G(rho) = (g0+g1) rho/2 (1 - rho/2) + (g0-g1)(1-rho) phi(rho) - (g0+g1) phi(rho)^2,

where ``phi = rho0~ - rho/2`` is the lane-0 excess density on the F-curve.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .kernels import MultiLaneRates, Rates, TwoLaneRates
from .lattice import Config

EQ_TOL = 1e-10
OPEN_MARGIN = 1e-9
GRID = 10_000
_INVPHI = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class FluxCurve:
    gamma0: float
    gamma1: float
    r: float  # q/p; 0 means q = 0, inf means p = 0

    def __post_init__(self):
        if not self.r >= 0:
            raise ValueError(f"r must be >= 0, got {self.r}")

    @classmethod
    def from_rates(cls, rates: TwoLaneRates) -> "FluxCurve":
        if rates.p + rates.q <= 0:
            raise ValueError("flux undefined for decoupled lanes (p + q = 0)")
        r = math.inf if rates.p == 0 else rates.q / rates.p
        return cls(rates.gamma0, rates.gamma1, r)

    @classmethod
    def normalized(cls, d: float, r: float) -> "FluxCurve":
        """The curve with ``gamma0 = d``, ``gamma1 = 1 - d``."""
        return cls(d, 1.0 - d, r)

    @property
    def d(self) -> float:
        s = self.gamma0 + self.gamma1
        if s == 0:
            raise ValueError("d undefined when gamma0 + gamma1 = 0")
        return self.gamma0 / s

    @property
    def _k(self) -> float:
        return 1.0 if math.isinf(self.r) else (self.r - 1.0) / (self.r + 1.0)

    def psi(self, rho):
        k = self._k
        return 1.0 + k * k * rho * (rho - 2.0)

    def phi(self, rho):
        k = self._k
        return k * rho * (2.0 - rho) / (2.0 * (1.0 + np.sqrt(self.psi(rho))))

    def __call__(self, rho):
        return G(self, rho)

    def flip_lanes(self) -> "FluxCurve":
        return FluxCurve(self.gamma1, self.gamma0, self.r)

    def invert_r(self) -> "FluxCurve":
        return FluxCurve(self.gamma0, self.gamma1, 0.0 if math.isinf(self.r) else
                         (math.inf if self.r == 0 else 1.0 / self.r))


def _check_rho(rho):
    a = np.asarray(rho, dtype=float)
    if np.any(a < 0) or np.any(a > 2) or np.any(np.isnan(a)):
        raise ValueError("rho must lie in [0, 2]")
    return a


def G(curve: FluxCurve, rho):
    """Flux at total density ``rho`` (scalar or array)."""
    a = _check_rho(rho)
    g0, g1 = curve.gamma0, curve.gamma1
    if curve.r == 0:
        out = np.where(a <= 1, g1 * a * (1 - a), g0 * (a - 1) * (2 - a))
    elif math.isinf(curve.r):
        out = np.where(a <= 1, g0 * a * (1 - a), g1 * (a - 1) * (2 - a))
    else:
        ph = curve.phi(a)
        out = (g0 + g1) * a / 2 * (1 - a / 2) + (g0 - g1) * (1 - a) * ph - (g0 + g1) * ph * ph
    return float(out) if np.ndim(out) == 0 else out


def G_from_lanes(curve: FluxCurve, rho):
    """Flux as ``gamma0 G0(rho0~) + gamma1 G0(rho1~)`` through the F-curve solver."""
    from .measures import solve_F

    p, q = (0.0, 1.0) if math.isinf(curve.r) else (1.0, curve.r)
    a = _check_rho(rho)
    lanes = np.array([solve_F((p, q), x) for x in a.reshape(-1)]).reshape(a.shape + (2,))
    r0, r1 = lanes[..., 0], lanes[..., 1]
    out = curve.gamma0 * r0 * (1 - r0) + curve.gamma1 * r1 * (1 - r1)
    return float(out) if np.ndim(out) == 0 else out


def G_derivative(curve: FluxCurve, rho, order: int):
    """Analytic ``d^order G / d rho^order`` for ``order`` in 1..3."""
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    a = _check_rho(rho)
    g0, g1 = curve.gamma0, curve.gamma1
    s, t = g0 + g1, g0 - g1
    if curve.r == 0 or math.isinf(curve.r):
        if np.any(a == 1):
            raise ValueError("flux has a kink at rho = 1 when p or q vanishes")
        lo, hi = (g1, g0) if curve.r == 0 else (g0, g1)
        if order == 1:
            out = np.where(a < 1, lo * (1 - 2 * a), hi * (3 - 2 * a))
        elif order == 2:
            out = np.where(a < 1, -2.0 * lo, -2.0 * hi)
        else:
            out = np.zeros_like(a)
        return float(out) if np.ndim(out) == 0 else out
    k = curve._k
    m = 1.0 - k * k  # = 4r/(r+1)^2
    psi = curve.psi(a)
    ph = curve.phi(a)
    ph1 = -(k / 2) * (a - 1) / np.sqrt(psi)
    ph2 = -(k / 2) * m * psi**-1.5
    ph3 = 1.5 * k**3 * m * (a - 1) * psi**-2.5
    if order == 1:
        out = s * (1 - a) / 2 + t * (-ph + (1 - a) * ph1) - 2 * s * ph * ph1
    elif order == 2:
        out = -s / 2 + t * (-2 * ph1 + (1 - a) * ph2) - 2 * s * (ph1 * ph1 + ph * ph2)
    else:
        out = t * (-3 * ph2 + (1 - a) * ph3) - s * (6 * ph1 * ph2 + 2 * ph * ph3)
    return float(out) if np.ndim(out) == 0 else out


def third_derivative_root(curve: FluxCurve) -> float:
    """Where ``G'''`` changes sign: ``1 + (g0-g1)/(g0+g1) * 4r / ((r-1)(r+1))``."""
    s = curve.gamma0 + curve.gamma1
    r = curve.r
    if s == 0:
        raise ValueError("G''' has constant sign when gamma0 + gamma1 = 0")
    if r == 1 or r == 0 or math.isinf(r):
        raise ValueError("no sign change of G''' for r in {0, 1, inf}")
    return 1.0 + (curve.gamma0 - curve.gamma1) / s * 4 * r / ((r - 1) * (r + 1))


def r0() -> float:
    """Critical vertical ratio below which the symmetric flux has G(1/2) > G(1)."""
    s = 2.0 * math.sqrt(-7.0 + math.sqrt(52.0))
    return (1.0 - s) / (1.0 + s)


def r0_residual(r: float) -> float:
    """``3 - (7/2) k^2 - k^4 / 16`` with ``k = (r-1)/(r+1)``; vanishes at :func:`r0`."""
    k2 = ((r - 1) / (r + 1)) ** 2
    return 3.0 - 3.5 * k2 - k2 * k2 / 16.0


# ---------------------------------------------------------------------------
# extremum search


def golden_section(f, a: float, b: float, tol: float = 1e-12, maximize: bool = False):
    """Golden-section search for the extremum of a unimodal ``f`` on ``[a, b]``."""
    sgn = -1.0 if maximize else 1.0
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = sgn * f(c), sgn * f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = sgn * f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = sgn * f(d)
    x = (a + b) / 2
    return x, f(x)


def extremum(curve: FluxCurve, a: float, b: float, maximize: bool = False) -> tuple[float, float]:
    """Global min (or max) of G on ``[a, b]``: uniform grid, then golden-section refinement."""
    if b < a:
        a, b = b, a
    xs = np.linspace(a, b, GRID + 1)
    ys = G(curve, xs)
    k = int(np.argmax(ys) if maximize else np.argmin(ys))
    best_x, best_y = float(xs[k]), float(ys[k])
    lo, hi = float(xs[max(k - 1, 0)]), float(xs[min(k + 1, GRID)])
    if hi > lo:
        x, y = golden_section(lambda t: G(curve, t), lo, hi, maximize=maximize)
        if (y > best_y) if maximize else (y < best_y):
            best_x, best_y = x, y
    return best_x, best_y


# ---------------------------------------------------------------------------
# shocks


@dataclass(frozen=True, order=True)
class ShockPair:
    rho_minus: float
    rho_plus: float

    def __post_init__(self):
        if self.rho_minus == self.rho_plus:
            raise ValueError("a shock needs rho_minus != rho_plus")

    @property
    def amplitude(self) -> float:
        return abs(self.rho_plus - self.rho_minus)

    def as_list(self) -> list[float]:
        return [self.rho_minus, self.rho_plus]


def entropy_condition(curve: FluxCurve, shock: ShockPair, tol: float = EQ_TOL) -> bool:
    """Equal flux at both ends, equal to the min (increasing shock) or max (decreasing shock)
    of G between them."""
    gm, gp = G(curve, shock.rho_minus), G(curve, shock.rho_plus)
    if abs(gm - gp) > tol:
        return False
    increasing = shock.rho_minus < shock.rho_plus
    _, ext = extremum(curve, shock.rho_minus, shock.rho_plus, maximize=not increasing)
    return ext >= gm - tol if increasing else ext <= gm + tol


def degeneracy(curve: FluxCurve) -> str | None:
    g0, g1, r = curve.gamma0, curve.gamma1, curve.r
    if r == 1 and g0 + g1 == 0:
        return "p = q and gamma0 + gamma1 = 0"
    if g0 == 0 and g1 == 0:
        return "gamma0 = gamma1 = 0"
    if r == 0 and g0 * g1 == 0:
        return "q = 0 and gamma0 * gamma1 = 0"
    return None


def _F(curve: FluxCurve):
    return lambda x: G(curve, x + 1.0) - G(curve, x)


def _roots_of_F(curve: FluxCurve) -> list[float]:
    f = _F(curve)
    xs = np.linspace(0.0, 1.0, GRID + 1)
    fv = f(xs)
    scale = max(1.0, abs(curve.gamma0) + abs(curve.gamma1))
    if np.max(np.abs(fv)) < 1e-13 * scale:
        # F vanishes identically: G is 1-periodic and the candidates are its extremal points
        cands = [0.0, 1.0, extremum(curve, 0, 1)[0], extremum(curve, 0, 1, maximize=True)[0]]
    else:
        cands = [float(x) for x, v in zip(xs, fv) if abs(v) <= 1e-14 * scale]
        for k in np.nonzero(np.sign(fv[:-1]) * np.sign(fv[1:]) < 0)[0]:
            cands.append(brentq(f, xs[k], xs[k + 1], xtol=1e-15, rtol=1e-15))
    out: list[float] = []
    for c in sorted(cands):
        if not out or c - out[-1] > 1e-9:
            out.append(c)
    return out


def solve_rho_dr(d: float, r: float) -> float:
    """The unique root in [0, 1] of ``G(rho+1) = G(rho)`` for ``gamma0 = d``, ``gamma1 = 1-d``."""
    if not 0 < r <= 1:
        raise ValueError("solve_rho_dr needs r in (0, 1]")
    curve = FluxCurve.normalized(d, r)
    f = _F(curve)
    # f(0) = G(1) > 0 > -G(1) = f(1)
    return float(brentq(f, 0.0, 1.0, xtol=1e-15, rtol=1e-15, maxiter=500))


@dataclass
class Classification:
    R0: list[ShockPair] = field(default_factory=list)
    degenerate: bool = False
    reason: str | None = None

    def to_json(self) -> dict:
        return {"R0": [s.as_list() for s in self.R0], "degenerate": self.degenerate,
                "reason": self.reason}


def classify_R0(source) -> Classification:
    """Entropy shocks of amplitude one for a flux curve (or the two-lane rates defining it)."""
    curve = FluxCurve.from_rates(source) if isinstance(source, TwoLaneRates) else source
    reason = degeneracy(curve)
    if reason:
        return Classification([], True, reason)
    found = []
    for x in _roots_of_F(curve):
        for pair in (ShockPair(x, x + 1.0), ShockPair(x + 1.0, x)):
            if entropy_condition(curve, pair):
                found.append(pair)
    return Classification(sorted(set(found)), False, None)


def in_Z(d: float, r: float) -> bool:
    """Strict membership ``I(d,r) < G(rho(d,r)) < S(d,r)``, extrema over ``[rho, rho + 1]``."""
    rho = solve_rho_dr(d, r)
    curve = FluxCurve.normalized(d, r)
    g = G(curve, rho)
    _, lo = extremum(curve, rho, rho + 1.0)
    _, hi = extremum(curve, rho, rho + 1.0, maximize=True)
    margin = min(g - lo, hi - g)
    if margin <= OPEN_MARGIN:
        # outside Z the margin is zero up to rounding; only a resolved small gap is "near"
        if margin > 1e-12:
            warnings.warn(f"(d, r) = ({d}, {r}) is within {OPEN_MARGIN} of the boundary of Z")
        return False
    return True


# ---------------------------------------------------------------------------
# microscopic current


def micro_current(config: Config, rates: Rates, cut: int) -> float:
    """Instantaneous expected current across the bond between columns ``cut`` and ``cut + 1``."""
    g = config.geometry
    if not g.periodic and not (g.z_min <= cut and cut + 1 <= g.z_max):
        raise IndexError("cut must have both neighbouring columns inside a closed window")
    a = config.occ[:, g.index(cut)].astype(float)
    b = config.occ[:, g.index(cut + 1)].astype(float)
    d, l = np.asarray(rates.d), np.asarray(rates.l)
    return float(np.sum(d * a * (1 - b) - l * b * (1 - a)))


def multilane_flux(rates: MultiLaneRates, rho: float) -> float:
    """Flux of the torus model under its product measure: ``sum_i gamma_i (rho/n)(1 - rho/n)``."""
    n = rates.n_lanes
    if not 0 <= rho <= n:
        raise ValueError(f"rho must lie in [0, {n}]")
    a = rho / n
    return float(sum(rates.gammas) * a * (1 - a))
