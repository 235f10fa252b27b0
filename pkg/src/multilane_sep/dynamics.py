"""Continuous-time exclusion dynamics on a finite window via the Harris construction.

Every directed bond carries a Poisson clock of its own rate. Superposing them gives one
clock of constant rate ``Lambda``; at each ring a bond is picked with probability
``rate / Lambda`` and the jump happens only if its source is occupied and its target
vacant. Coupled runs feed the same clocks to two configurations.
"""
from __future__ import annotations

import enum
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numba
import numpy as np

from .kernels import Rates, enumerate_bonds
from .lattice import Config, LaneGeometry
from .rng import make_rng

Observer = Callable[[Config], object]


# ---------------------------------------------------------------------------
# bond tables


@dataclass(frozen=True)
class BondTable:
    """Flat bond arrays; site ``(z, i)`` has flat index ``i * L + (z - z_min)``."""

    src: np.ndarray
    dst: np.ndarray
    rate: np.ndarray
    cum: np.ndarray
    cut: np.ndarray  # cut index k = bond between columns k and k+1 (mod L); -1 if vertical
    sign: np.ndarray  # +1 rightward, -1 leftward, 0 vertical
    total: float

    def __len__(self) -> int:
        return len(self.src)


def bond_table(rates: Rates, geometry: LaneGeometry) -> BondTable:
    bonds = enumerate_bonds(rates, geometry)
    L = geometry.length
    src, dst, rate, cut, sign = [], [], [], [], []
    for b in bonds:
        (z0, i0), (z1, i1) = b.src, b.dst
        k0, k1 = geometry.index(z0), geometry.index(z1)
        src.append(i0 * L + k0)
        dst.append(i1 * L + k1)
        rate.append(b.rate)
        if i0 != i1:
            cut.append(-1)
            sign.append(0)
        elif k1 == (k0 + 1) % L:
            cut.append(k0)
            sign.append(1)
        else:
            cut.append(k1)
            sign.append(-1)
    rate_a = np.asarray(rate, dtype=float)
    cum = np.cumsum(rate_a)
    return BondTable(
        np.asarray(src, np.int64), np.asarray(dst, np.int64), rate_a, cum,
        np.asarray(cut, np.int64), np.asarray(sign, np.int64),
        float(cum[-1]) if len(cum) else 0.0,
    )


# ---------------------------------------------------------------------------
# jitted event loops


@numba.njit(cache=True)
def _pick(rng, cum, total):
    u = rng.random() * total
    b = np.searchsorted(cum, u, side="right")
    if b >= cum.shape[0]:
        b = cum.shape[0] - 1
    return b


@numba.njit(cache=True)
def _evolve(occ, src, dst, cum, cut, sign, total, span, rng, crossings):
    """Advance ``occ`` (flat, in place) for ``span`` time units; returns (attempted, accepted)."""
    attempted = 0
    accepted = 0
    if total <= 0.0:
        return attempted, accepted
    t = rng.standard_exponential() / total
    while t <= span:
        b = _pick(rng, cum, total)
        attempted += 1
        s = src[b]
        d = dst[b]
        if occ[s] == 1 and occ[d] == 0:
            occ[s] = 0
            occ[d] = 1
            accepted += 1
            if cut[b] >= 0:
                crossings[cut[b]] += sign[b]
        t += rng.standard_exponential() / total
    return attempted, accepted


@numba.njit(cache=True)
def _evolve_coupled(a, b_, src, dst, cum, total, span, rng, stats):
    """Basic coupling of two flat configurations.

    ``stats`` accumulates [attempted, moves_a, moves_b, coalescences, creations].
    """
    if total <= 0.0:
        return
    t = rng.standard_exponential() / total
    while t <= span:
        k = _pick(rng, cum, total)
        stats[0] += 1
        s = src[k]
        d = dst[k]
        before = abs(a[s] - b_[s]) + abs(a[d] - b_[d])
        if a[s] == 1 and a[d] == 0:
            a[s] = 0
            a[d] = 1
            stats[1] += 1
        if b_[s] == 1 and b_[d] == 0:
            b_[s] = 0
            b_[d] = 1
            stats[2] += 1
        after = abs(a[s] - b_[s]) + abs(a[d] - b_[d])
        if after < before:
            stats[3] += (before - after) // 2
        elif after > before:
            stats[4] += 1
        t += rng.standard_exponential() / total


@numba.njit(cache=True)
def _track(a, b_, src, dst, cum, total, span, rng, tag):
    """Follow the discrepancy at flat site ``tag`` until it coalesces or time runs out."""
    times = [0.0]
    sites = [tag]
    alive = True
    if total <= 0.0:
        return times, sites, alive
    t = rng.standard_exponential() / total
    while t <= span:
        k = _pick(rng, cum, total)
        s = src[k]
        d = dst[k]
        if a[s] == 1 and a[d] == 0:
            a[s] = 0
            a[d] = 1
        if b_[s] == 1 and b_[d] == 0:
            b_[s] = 0
            b_[d] = 1
        if (s == tag or d == tag) and a[tag] == b_[tag]:
            other = d if s == tag else s
            times.append(t)
            if a[other] != b_[other]:
                tag = other
                sites.append(tag)
            else:
                sites.append(-1)
                alive = False
                break
        t += rng.standard_exponential() / total
    return times, sites, alive


# ---------------------------------------------------------------------------
# single process


@dataclass
class Trajectory:
    times: list[float]
    snapshots: list[Config]
    observations: dict[str, list]
    attempted: int
    accepted: int
    crossings: np.ndarray  # net rightward crossings per cut, cumulative to each snapshot time
    final: Config
    T: float
    seed: object

    @property
    def events(self) -> int:
        return self.accepted

    def to_json(self) -> dict:
        return {
            "seed": self.seed if isinstance(self.seed, int) else None,
            "T": self.T,
            "attempted": self.attempted,
            "accepted": self.accepted,
            "snapshots": [
                {"t": t, "config": c.to_json()["lanes"], "crossings": x.tolist()}
                for t, c, x in zip(self.times, self.snapshots, self.crossings)
            ],
            "observations": {k: [_jsonable(v) for v in vs] for k, vs in self.observations.items()},
        }


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return v


def _snapshot_times(T: float, snapshots: Sequence[float] | None) -> list[float]:
    if not T >= 0:
        raise ValueError("T must be >= 0")
    ts = sorted(float(t) for t in (snapshots if snapshots is not None else [T]))
    if any(t < 0 or t > T for t in ts):
        raise ValueError("snapshot times must lie in [0, T]")
    return ts


def run(
    initial: Config,
    rates: Rates,
    T: float,
    observers: Mapping[str, Observer] | None = None,
    seed=0,
    snapshots: Sequence[float] | None = None,
    table: BondTable | None = None,
) -> Trajectory:
    """Simulate from ``initial`` for time ``T``, recording at the ``snapshots`` times."""
    g = initial.geometry
    table = table or bond_table(rates, g)
    if len(table) == 0:
        raise ValueError("no bonds with positive rate in this window")
    times = _snapshot_times(T, snapshots)
    rng = make_rng(seed)
    occ = initial.occ.reshape(-1).copy()
    cross = np.zeros(g.length, np.int64)
    observers = dict(observers or {})
    snaps, obs, xs = [], {k: [] for k in observers}, []
    att = acc = 0
    now = 0.0
    for t in times:
        a1, a2 = _evolve(occ, table.src, table.dst, table.cum, table.cut, table.sign,
                         table.total, t - now, rng, cross)
        att, acc, now = att + a1, acc + a2, t
        cfg = Config(g, occ.reshape(g.n_lanes, g.length))
        snaps.append(cfg)
        xs.append(cross.copy())
        for k, f in observers.items():
            obs[k].append(f(cfg))
    if now < T:
        a1, a2 = _evolve(occ, table.src, table.dst, table.cum, table.cut, table.sign,
                         table.total, T - now, rng, cross)
        att, acc = att + a1, acc + a2
    final = Config(g, occ.reshape(g.n_lanes, g.length))
    return Trajectory(times, snaps, obs, att, acc,
                      np.array(xs, dtype=np.int64).reshape(len(times), g.length),
                      final, float(T), seed)


def evolve_batch(
    occ: np.ndarray,
    rates: Rates,
    geometry: LaneGeometry,
    T: float,
    seeds: Sequence[int],
    table: BondTable | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Run each replica of ``occ`` (shape (R, n, L)) for time ``T`` with its own seed.

    Returns the final occupancies and per-cut net crossings (shape (R, L)). Replica ``k``
    matches ``run(Config(geometry, occ[k]), rates, T, seed=seeds[k]).final`` when ``run``
    takes no intermediate snapshots (each snapshot restarts the exponential clock).
    """
    table = table or bond_table(rates, geometry)
    out = np.array(occ, dtype=np.uint8, copy=True).reshape(len(seeds), -1)
    cross = np.zeros((len(seeds), geometry.length), np.int64)
    for k, s in enumerate(seeds):
        _evolve(out[k], table.src, table.dst, table.cum, table.cut, table.sign,
                table.total, float(T), make_rng(s), cross[k])
    return out.reshape(len(seeds), geometry.n_lanes, geometry.length), cross


def _batch_worker(args):
    return evolve_batch(*args)


def evolve_parallel(occ, rates, geometry, T, seeds, jobs: int | None = None):
    """:func:`evolve_batch` fanned out over processes; identical output for any ``jobs``."""
    jobs = jobs or os.cpu_count() or 1
    seeds = list(seeds)
    if jobs <= 1 or len(seeds) < 2:
        return evolve_batch(occ, rates, geometry, T, seeds)
    parts = np.array_split(np.arange(len(seeds)), jobs)
    tasks = [(occ[p], rates, geometry, T, [seeds[i] for i in p]) for p in parts if len(p)]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        res = list(ex.map(_batch_worker, tasks))
    return np.concatenate([r[0] for r in res]), np.concatenate([r[1] for r in res])


# ---------------------------------------------------------------------------
# coupled process


class Mark(enum.IntEnum):
    HOLE = 0
    COUPLED = 1
    ETA_DISC = 2
    XI_DISC = 3


class PairOrder(str, enum.Enum):
    EQUAL = "Equal"
    LE = "LE"
    GE = "GE"
    BOWTIE_CANDIDATE = "Bowtie-candidate"
    SUPINF = "SupInf"
    UNORDERED = "Unordered"


@dataclass(frozen=True)
class CoupledConfig:
    eta: Config
    xi: Config
    registry: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.eta.geometry != self.xi.geometry:
            raise ValueError("coupled configurations must share a geometry")
        e, x = self.eta.occ.astype(np.int8), self.xi.occ.astype(np.int8)
        reg = np.where(e == x, e, np.where(e > x, Mark.ETA_DISC, Mark.XI_DISC)).astype(np.int8)
        reg.setflags(write=False)
        object.__setattr__(self, "registry", reg)

    @property
    def geometry(self) -> LaneGeometry:
        return self.eta.geometry

    def mark(self, z: int, i: int) -> Mark:
        return Mark(int(self.registry[i, self.geometry.index(z)]))

    @property
    def D(self) -> int:
        return int(np.count_nonzero(self.registry >= Mark.ETA_DISC))


def count_discrepancies(cc: CoupledConfig, m: int, n: int) -> int:
    """Discrepancies at columns ``m..n`` (all lanes)."""
    g = cc.geometry
    if m > n:
        raise ValueError("need m <= n")
    lo, hi = g.index(m), g.index(n)
    if hi < lo:
        raise ValueError("interval wraps around the ring")
    diff = cc.eta.occ[:, lo:hi + 1] != cc.xi.occ[:, lo:hi + 1]
    return int(diff.sum())


def classify_pair(cc: CoupledConfig) -> PairOrder:
    e, x = cc.eta.occ, cc.xi.occ
    if cc.geometry.n_lanes != 2:
        raise ValueError("pair classification is defined for two lanes")
    if np.array_equal(e, x):
        return PairOrder.EQUAL
    if np.all(e <= x):
        return PairOrder.LE
    if np.all(e >= x):
        return PairOrder.GE
    cols = cc.geometry.columns
    d1 = np.nonzero(e[1] != x[1])[0]
    d0 = np.nonzero(e[0] != x[0])[0]
    if len(d1) == 0 or len(d0) == 0:
        return PairOrder.UNORDERED
    kx, ky = d1[-1], d0[0]  # rightmost on lane 1, leftmost on lane 0
    if not cols[kx] < cols[ky]:
        return PairOrder.UNORDERED
    if e[1, kx] > x[1, kx]:
        ok = np.all(e[0] <= x[0]) and np.all(e[1] >= x[1])
    else:
        ok = np.all(e[0] >= x[0]) and np.all(e[1] <= x[1])
    if not ok:
        return PairOrder.UNORDERED
    reg = cc.registry
    right_coupled = np.all(reg[1, kx + 1:] == Mark.COUPLED)
    left_holes = np.all(reg[0, :ky] == Mark.HOLE)
    return PairOrder.BOWTIE_CANDIDATE if right_coupled and left_holes else PairOrder.SUPINF


@dataclass
class CoupledTrajectory:
    times: list[float]
    snapshots: list[CoupledConfig]
    observations: dict[str, list]
    attempted: int
    moves: tuple[int, int]
    coalescences: int
    creations: int  # events that increased the discrepancy count; zero under basic coupling
    final: CoupledConfig
    T: float
    seed: object

    @property
    def D(self) -> list[int]:
        return [c.D for c in self.snapshots]

    def to_json(self) -> dict:
        return {
            "seed": self.seed if isinstance(self.seed, int) else None,
            "T": self.T,
            "attempted": self.attempted,
            "moves": list(self.moves),
            "coalescences": self.coalescences,
            "creations": self.creations,
            "snapshots": [
                {"t": t, "eta": c.eta.to_json()["lanes"], "xi": c.xi.to_json()["lanes"],
                 "D": c.D, "order": classify_pair(c).value if c.geometry.n_lanes == 2 else None}
                for t, c in zip(self.times, self.snapshots)
            ],
            "observations": {k: [_jsonable(v) for v in vs] for k, vs in self.observations.items()},
        }


def run_coupled(
    initial: CoupledConfig,
    rates: Rates,
    T: float,
    observers: Mapping[str, Callable[[CoupledConfig], object]] | None = None,
    seed=0,
    snapshots: Sequence[float] | None = None,
    table: BondTable | None = None,
) -> CoupledTrajectory:
    g = initial.geometry
    table = table or bond_table(rates, g)
    if len(table) == 0:
        raise ValueError("no bonds with positive rate in this window")
    times = _snapshot_times(T, snapshots)
    rng = make_rng(seed)
    a = initial.eta.occ.reshape(-1).astype(np.int8)
    b = initial.xi.occ.reshape(-1).astype(np.int8)
    stats = np.zeros(5, np.int64)
    observers = dict(observers or {})
    snaps, obs = [], {k: [] for k in observers}
    now = 0.0

    def current() -> CoupledConfig:
        shape = (g.n_lanes, g.length)
        return CoupledConfig(Config(g, a.reshape(shape)), Config(g, b.reshape(shape)))

    for t in times:
        _evolve_coupled(a, b, table.src, table.dst, table.cum, table.total, t - now, rng, stats)
        now = t
        cc = current()
        snaps.append(cc)
        for k, f in observers.items():
            obs[k].append(f(cc))
    if now < T:
        _evolve_coupled(a, b, table.src, table.dst, table.cum, table.total, T - now, rng, stats)
    return CoupledTrajectory(times, snaps, obs, int(stats[0]), (int(stats[1]), int(stats[2])),
                             int(stats[3]), int(stats[4]), current(), float(T), seed)


@dataclass
class TaggedPath:
    times: np.ndarray
    sites: list[tuple[int, int] | None]  # None marks coalescence
    coalesced: bool

    @property
    def columns(self) -> np.ndarray:
        return np.array([s[0] for s in self.sites if s is not None])

    def max_displacement(self) -> int:
        c = self.columns
        return int(np.max(np.abs(c - c[0])))


def track_tagged_discrepancy(
    cc: CoupledConfig,
    rates: Rates,
    T: float,
    seed=0,
    site: tuple[int, int] | None = None,
    table: BondTable | None = None,
) -> TaggedPath:
    """Position of one discrepancy (the leftmost, lane 0 first, unless ``site`` is given)
    at each event that moves it, until coalescence or time ``T``."""
    g = cc.geometry
    disc = np.argwhere(cc.registry >= Mark.ETA_DISC)
    if len(disc) == 0:
        raise ValueError("no discrepancy to track")
    if site is None:
        order = np.lexsort((disc[:, 0], disc[:, 1]))
        i, k = disc[order[0]]
    else:
        z, i = site
        k = g.index(z)
        if cc.registry[i, k] < Mark.ETA_DISC:
            raise ValueError(f"no discrepancy at {site}")
    table = table or bond_table(rates, g)
    a = cc.eta.occ.reshape(-1).astype(np.int8)
    b = cc.xi.occ.reshape(-1).astype(np.int8)
    times, flat, alive = _track(a, b, table.src, table.dst, table.cum, table.total, float(T),
                                make_rng(seed), int(i) * g.length + int(k))
    sites = [None if f < 0 else (int(g.z_min + f % g.length), int(f // g.length)) for f in flat]
    return TaggedPath(np.asarray(times), sites, not alive)


def ordered(cc: CoupledConfig) -> bool:
    e, x = cc.eta.occ, cc.xi.occ
    return bool(np.all(e <= x) or np.all(e >= x))
