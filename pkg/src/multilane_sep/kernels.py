"""Jump-rate kernels, lane symmetries and connectivity checks."""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from .lattice import Config, LaneGeometry, VTopology


@dataclass(frozen=True)
class TwoLaneRates:
    """Rates ``d_i`` (right) and ``l_i`` (left) on lane ``i``; ``p`` is 0->1, ``q`` is 1->0."""

    d0: float
    l0: float
    d1: float
    l1: float
    p: float
    q: float
    # toy kernels without horizontal motion (pure vertical chains) opt out of the check
    require_motion: bool = field(default=True, kw_only=True, compare=False, repr=False)

    def __post_init__(self):
        for name in ("d0", "l0", "d1", "l1", "p", "q"):
            v = float(getattr(self, name))
            if not v >= 0 or not math.isfinite(v):
                raise ValueError(f"rate {name} must be finite and nonnegative, got {v}")
            object.__setattr__(self, name, v)
        if self.require_motion and (self.d0 + self.l0) * (self.d1 + self.l1) <= 0:
            raise ValueError("particles must be able to move on both lanes: (d0+l0)(d1+l1) > 0")

    n_lanes = 2

    @property
    def d(self) -> tuple[float, float]:
        return (self.d0, self.d1)

    @property
    def l(self) -> tuple[float, float]:
        return (self.l0, self.l1)

    @property
    def gamma0(self) -> float:
        return self.d0 - self.l0

    @property
    def gamma1(self) -> float:
        return self.d1 - self.l1

    @property
    def decoupled(self) -> bool:
        """True when ``p = q = 0`` (two independent lanes)."""
        return self.p + self.q == 0

    @property
    def r(self) -> float:
        if self.p <= 0:
            raise ValueError("r = q/p requires p > 0")
        return self.q / self.p

    @property
    def dd(self) -> float:
        s = self.gamma0 + self.gamma1
        if s == 0:
            raise ValueError("d = gamma0/(gamma0+gamma1) undefined when gamma0+gamma1 = 0")
        return self.gamma0 / s

    def vertical_matrix(self) -> np.ndarray:
        return np.array([[0.0, self.p], [self.q, 0.0]])

    def as_tuple(self) -> tuple[float, ...]:
        return (self.d0, self.l0, self.d1, self.l1, self.p, self.q)

    def to_dict(self) -> dict:
        return dict(zip(("d0", "l0", "d1", "l1", "p", "q"), self.as_tuple()))


@dataclass(frozen=True)
class MultiLaneRates:
    """Per-lane horizontal rates and a translation-invariant vertical kernel on the torus.

    ``Q[k]`` is the rate of a jump from lane ``i`` to lane ``i + k mod n``; ``Q[0]`` is ignored.
    """

    d: tuple[float, ...]
    l: tuple[float, ...]
    Q: tuple[float, ...]
    require_motion: bool = field(default=True, kw_only=True, compare=False, repr=False)

    def __post_init__(self):
        d = tuple(float(v) for v in self.d)
        l = tuple(float(v) for v in self.l)
        Q = tuple(float(v) for v in self.Q)
        n = len(d)
        if n < 2 or len(l) != n or len(Q) != n:
            raise ValueError("d, l and Q must all have length n >= 2")
        if any(v < 0 or not math.isfinite(v) for v in d + l + Q):
            raise ValueError("rates must be finite and nonnegative")
        if self.require_motion and any(a + b <= 0 for a, b in zip(d, l)):
            raise ValueError("every lane needs d_i + l_i > 0")
        Q = (0.0,) + Q[1:]
        support = [k for k in range(1, n) if Q[k] > 0]
        if math.gcd(n, *support) != 1:
            raise ValueError("vertical kernel Q is not irreducible on the torus")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "Q", Q)

    @property
    def n_lanes(self) -> int:
        return len(self.d)

    @property
    def gammas(self) -> tuple[float, ...]:
        return tuple(a - b for a, b in zip(self.d, self.l))

    @property
    def lane_independent(self) -> bool:
        return len(set(self.d)) == 1 and len(set(self.l)) == 1

    def vertical_matrix(self) -> np.ndarray:
        n = self.n_lanes
        V = np.zeros((n, n))
        for i in range(n):
            for k in range(1, n):
                V[i, (i + k) % n] += self.Q[k]
        return V

    def to_dict(self) -> dict:
        return {"d": list(self.d), "l": list(self.l), "Q": list(self.Q)}


Rates = Union[TwoLaneRates, MultiLaneRates]


class DirectedRate(NamedTuple):
    src: tuple[int, int]
    dst: tuple[int, int]
    rate: float


def check_compatible(rates: Rates, geometry: LaneGeometry) -> None:
    if rates.n_lanes != geometry.n_lanes:
        raise ValueError(
            f"rates are for {rates.n_lanes} lanes but geometry has {geometry.n_lanes}"
        )
    if isinstance(rates, TwoLaneRates) and geometry.v_topology is not VTopology.TWO_LANE:
        raise ValueError("two-lane rates need a two-lane geometry")


def enumerate_bonds(rates: Rates, geometry: LaneGeometry) -> list[DirectedRate]:
    """Every directed site pair with positive rate inside the window.

    Sites are ``(z, lane)``. Closed windows drop the wrap-around bonds.
    """
    check_compatible(rates, geometry)
    L, cols = geometry.length, geometry.columns
    bonds: list[DirectedRate] = []
    for i in range(geometry.n_lanes):
        for step, rate in ((1, rates.d[i]), (-1, rates.l[i])):
            if rate <= 0:
                continue
            for k in range(L):
                k2 = k + step
                if not 0 <= k2 < L:
                    if not geometry.periodic:
                        continue
                    k2 %= L
                if k2 == k:
                    continue
                bonds.append(DirectedRate((int(cols[k]), i), (int(cols[k2]), i), rate))
    V = rates.vertical_matrix()
    for k in range(L):
        z = int(cols[k])
        for i in range(geometry.n_lanes):
            for j in range(geometry.n_lanes):
                if i != j and V[i, j] > 0:
                    bonds.append(DirectedRate((z, i), (z, j), float(V[i, j])))
    return bonds


class Symmetry(str, enum.Enum):
    LANE_REFLECT = "sigma"  # z -> -z
    LANE_EXCHANGE = "sigma_prime"  # lane i -> 1 - i
    PARTICLE_HOLE = "sigma_second"  # eta -> 1 - eta


def apply_symmetry(which: Symmetry, config: Config) -> Config:
    which = Symmetry(which)
    g = config.geometry
    occ = config.occ
    if which is Symmetry.PARTICLE_HOLE:
        return Config(g, 1 - occ)
    if which is Symmetry.LANE_EXCHANGE:
        if g.n_lanes != 2:
            raise ValueError("lane exchange is defined for two lanes only")
        return Config(g, occ[::-1])
    # reflection through column 0; closed windows are symmetric about 0 by construction
    idx = np.array([g.index(-z) for z in g.columns])
    return Config(g, occ[:, idx])


def conjugate_rates(which: Symmetry, rates: TwoLaneRates) -> TwoLaneRates:
    """Parameters of the image process under a lane symmetry."""
    which = Symmetry(which)
    d0, l0, d1, l1, p, q = rates.as_tuple()
    kw = {"require_motion": rates.require_motion}
    if which is Symmetry.LANE_REFLECT:
        return TwoLaneRates(l0, d0, l1, d1, p, q, **kw)
    if which is Symmetry.LANE_EXCHANGE:
        return TwoLaneRates(d1, l1, d0, l0, q, p, **kw)
    return TwoLaneRates(l0, d0, l1, d1, q, p, **kw)


def is_normalized(rates: TwoLaneRates) -> bool:
    g0, g1 = rates.gamma0, rates.gamma1
    return g0 >= 0 and g0 + g1 >= 0 and rates.p >= rates.q and rates.p > 0


def normalize(rates: TwoLaneRates) -> tuple[TwoLaneRates, tuple[Symmetry, ...]]:
    """Conjugate ``rates`` into the normalized region; returns the rates and the symmetries used."""
    if rates.decoupled:
        raise ValueError("p + q = 0: lanes are decoupled and cannot be normalized")
    for k in range(4):
        for combo in itertools.combinations(tuple(Symmetry), k):
            out = rates
            for s in combo:
                out = conjugate_rates(s, out)
            if is_normalized(out):
                return out, combo
    raise AssertionError("unreachable: the symmetry group always reaches the normalized region")


def is_weakly_irreducible(rates: Rates) -> bool:
    """Whether every pair of distinct sites is joined by a positive-rate path in some direction."""
    if isinstance(rates, MultiLaneRates):
        return True  # Q irreducible is enforced at construction
    d0, l0, d1, l1, p, q = rates.as_tuple()
    if p + q == 0:
        return False
    same_direction_tasep = d0 * l0 + d1 * l1 == 0 < d0 * d1 + l0 * l1
    return not (min(p, q) == 0 and same_direction_tasep)


def weakly_irreducible_bruteforce(rates: Rates, length: int = 5) -> bool:
    """Reachability check on a small closed window; an oracle for :func:`is_weakly_irreducible`."""
    n = rates.n_lanes
    topo = VTopology.TWO_LANE if isinstance(rates, TwoLaneRates) else VTopology.TORUS
    g = LaneGeometry(n, length, "closed", topo)
    sites = [(int(z), i) for i in range(n) for z in g.columns]
    pos = {s: k for k, s in enumerate(sites)}
    reach = np.eye(len(sites), dtype=bool)
    for b in enumerate_bonds(rates, g):
        reach[pos[b.src], pos[b.dst]] = True
    for k in range(len(sites)):
        reach |= reach[:, [k]] & reach[[k], :]
    return bool((reach | reach.T).all())


def _parse_number(text: str) -> float:
    return float(Fraction(text.strip()))


def parse_rates(text: str) -> Rates:
    """Read a ``key = value`` rate file.

    Two-lane files give ``d0 l0 d1 l1 p q``; multilane files give ``d``, ``l`` and ``Q``
    as comma-separated lists (optionally bracketed). Values are parsed as exact decimals.
    """
    values: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key] = val
    two = ("d0", "l0", "d1", "l1", "p", "q")
    if all(k in values for k in two):
        extra = set(values) - set(two)
        if extra:
            raise ValueError(f"unknown keys {sorted(extra)}")
        return TwoLaneRates(*(_parse_number(values[k]) for k in two))
    if all(k in values for k in ("d", "l", "Q")):
        def arr(s: str) -> tuple[float, ...]:
            return tuple(_parse_number(v) for v in s.strip("[]() ").split(",") if v.strip())
        return MultiLaneRates(arr(values["d"]), arr(values["l"]), arr(values["Q"]))
    raise ValueError("rate file needs keys d0,l0,d1,l1,p,q or d,l,Q")


def load_rates(path: str | Path) -> Rates:
    return parse_rates(Path(path).read_text())


def rates_from_dict(d: dict) -> Rates:
    if "Q" in d:
        return MultiLaneRates(tuple(d["d"]), tuple(d["l"]), tuple(d["Q"]))
    return TwoLaneRates(d["d0"], d["l0"], d["d1"], d["l1"], d["p"], d["q"])
