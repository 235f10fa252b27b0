"""Statistical and exact checks of candidate stationary measures."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from .dynamics import Trajectory, bond_table, evolve_parallel
from .kernels import MultiLaneRates, Rates, check_compatible, enumerate_bonds
from .lattice import Config, LaneGeometry, H2_batch
from .measures import (
    PRODUCT_TRANSLATION_INVARIANT,
    MeasureSpec,
    PartialBlocking,
    ReversibleProfile,
    product_marginals,
    sample_batch,
)
from .rng import replica_seed

ALPHA = 0.01
SAMPLING_STREAM = 1 << 40  # replica index reserved for the initial-state sampler


# ---------------------------------------------------------------------------
# observables


def ring_observables(occ: np.ndarray) -> dict[str, np.ndarray]:
    """Per-replica lane densities, horizontal neighbour and vertical correlations.

    ``occ`` has shape (R, n, L) on a periodic window.
    """
    x = occ.astype(float)
    n = x.shape[1]
    out = {}
    for i in range(n):
        out[f"density[{i}]"] = x[:, i].mean(axis=1)
    for i in range(n):
        out[f"hcorr[{i}]"] = (x[:, i] * np.roll(x[:, i], -1, axis=1)).mean(axis=1)
    pairs = [(0, 1)] if n == 2 else [(i, (i + 1) % n) for i in range(n)]
    for i, j in pairs:
        out[f"vcorr[{i},{j}]"] = (x[:, i] * x[:, j]).mean(axis=1)
    return out


def window_observables(occ: np.ndarray, geometry: LaneGeometry) -> dict[str, np.ndarray]:
    """Per-replica lane counts and first moments on a closed window."""
    x = occ.astype(float)
    z = geometry.columns.astype(float)
    out = {}
    for i in range(x.shape[1]):
        out[f"count[{i}]"] = x[:, i].sum(axis=1)
        out[f"moment[{i}]"] = (x[:, i] * z).sum(axis=1)
    return out


def observables(occ: np.ndarray, geometry: LaneGeometry) -> dict[str, np.ndarray]:
    return ring_observables(occ) if geometry.periodic else window_observables(occ, geometry)


def bonferroni_threshold(alpha: float, m: int) -> float:
    """Two-sided z threshold at family-wise level ``alpha`` over ``m`` tests."""
    return float(norm.isf(alpha / (2 * max(m, 1))))


def _z(diff_mean: float, se: float) -> float:
    if se > 0:
        return diff_mean / se
    return 0.0 if diff_mean == 0 else math.copysign(math.inf, diff_mean)


# ---------------------------------------------------------------------------
# stationarity


@dataclass
class StationarityReport:
    names: list[str]
    mean0: list[float]
    se0: list[float]
    meanT: list[float]
    seT: list[float]
    z: list[float]
    alpha: float
    threshold: float
    passed: bool
    replicas: int
    seed: int
    T: float
    paired: bool = True
    notes: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        def f(v):
            return v if math.isfinite(v) else str(v)

        return {
            "observables": [
                {"name": n, "mean0": f(a), "se0": f(b), "meanT": f(c), "seT": f(d), "z": f(e)}
                for n, a, b, c, d, e in zip(self.names, self.mean0, self.se0, self.meanT,
                                            self.seT, self.z)
            ],
            "alpha": self.alpha,
            "threshold": self.threshold,
            "passed": self.passed,
            "replicas": self.replicas,
            "seed": self.seed,
            "seed_rule": "replica k uses mix64(seed ^ k); initial sampler uses k = 2**40",
            "T": self.T,
            "paired": self.paired,
            "notes": self.notes,
        }


def compare_samples(a: dict[str, np.ndarray], b: dict[str, np.ndarray], *, paired: bool,
                    alpha: float = ALPHA):
    """z-tests of equal means per observable, Bonferroni-corrected."""
    names = list(a)
    thr = bonferroni_threshold(alpha, len(names))
    m0, s0, m1, s1, zs = [], [], [], [], []
    for k in names:
        x, y = np.asarray(a[k], float), np.asarray(b[k], float)
        m0.append(float(x.mean()))
        m1.append(float(y.mean()))
        s0.append(float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0)
        s1.append(float(y.std(ddof=1) / math.sqrt(len(y))) if len(y) > 1 else 0.0)
        if paired:
            d = y - x
            se = float(d.std(ddof=1) / math.sqrt(len(d))) if len(d) > 1 else 0.0
        else:
            se = math.hypot(s0[-1], s1[-1])
        zs.append(_z(m1[-1] - m0[-1], se))
    passed = all(abs(z) <= thr for z in zs)
    return names, m0, s0, m1, s1, zs, thr, passed


@dataclass
class RunBatch:
    """Initial and final states of ``R`` replicas plus per-cut crossings."""

    geometry: LaneGeometry
    occ0: np.ndarray
    occT: np.ndarray
    crossings: np.ndarray
    T: float
    seed: int

    @property
    def replicas(self) -> int:
        return len(self.occ0)


def run_batch(spec_or_occ, rates: Rates, geometry: LaneGeometry, T: float, replicas: int,
              seed: int, jobs: int | None = 1) -> RunBatch:
    """Draw ``replicas`` initial states from a measure spec (or repeat a fixed Config) and
    evolve each for time ``T`` on its own stream."""
    check_compatible(rates, geometry)
    if isinstance(spec_or_occ, Config):
        if spec_or_occ.geometry != geometry:
            raise ValueError("initial configuration lives on a different window")
        occ0 = np.repeat(spec_or_occ.occ[None], replicas, axis=0)
    else:
        occ0 = sample_batch(spec_or_occ, geometry, replicas, replica_seed(seed, SAMPLING_STREAM))
    seeds = [replica_seed(seed, k) for k in range(replicas)]
    occT, cross = evolve_parallel(occ0, rates, geometry, T, seeds, jobs=jobs)
    return RunBatch(geometry, occ0, occT, cross, float(T), int(seed))


def stationarity_test(spec: MeasureSpec, rates: Rates, geometry: LaneGeometry, T: float,
                      replicas: int = 200, seed: int = 0, alpha: float = ALPHA,
                      batch: RunBatch | None = None, jobs: int | None = 1) -> StationarityReport:
    """Compare observables at time 0 and time ``T`` across replicas.

    Differences are tested replica by replica (paired z-test), which is valid whether or
    not the two times are correlated and is sharper than an unpaired test.
    """
    if isinstance(spec, PRODUCT_TRANSLATION_INVARIANT) and not geometry.periodic:
        raise ValueError("translation-invariant product measures need a periodic window")
    if batch is None:
        batch = run_batch(spec, rates, geometry, T, replicas, seed, jobs)
    g = batch.geometry
    a, b = observables(batch.occ0, g), observables(batch.occT, g)
    names, m0, s0, m1, s1, zs, thr, ok = compare_samples(a, b, paired=True, alpha=alpha)
    notes = {}
    if not g.periodic:
        h0, h1 = H2_batch(batch.occ0, g), H2_batch(batch.occT, g)
        notes["H2_conserved"] = bool(np.array_equal(h0, h1))
        notes["H2_values"] = sorted({int(v) for v in h0})
    return StationarityReport(names, m0, s0, m1, s1, zs, alpha, thr, ok, batch.replicas,
                              batch.seed, batch.T, True, notes)


def tune_T(control: MeasureSpec, rates: Rates, geometry: LaneGeometry, replicas: int, seed: int,
           T0: float = 0.5, T_max: float = 512.0, jobs: int | None = 1) -> float:
    """Smallest ``T0 * 2^k`` at which a non-stationary control is rejected."""
    T = T0
    while T <= T_max:
        if not stationarity_test(control, rates, geometry, T, replicas, seed, jobs=jobs).passed:
            return T
        T *= 2
    raise RuntimeError(f"control never rejected up to T = {T_max}")


# ---------------------------------------------------------------------------
# exact checks


def detailed_balance_check(spec: MeasureSpec, rates: Rates, geometry: LaneGeometry) -> float:
    """Largest violation of ``rho_x (1 - rho_y) pi(x,y) = rho_y (1 - rho_x) pi(y,x)`` over bonds."""
    if not isinstance(spec, (ReversibleProfile, PartialBlocking)):
        raise ValueError("detailed balance applies to reversible product profiles")
    rho, bar = product_marginals(spec, geometry)
    bonds = enumerate_bonds(rates, geometry)
    table = {(b.src, b.dst): b.rate for b in bonds}
    worst = 0.0
    for (x, y), rate in table.items():
        back = table.get((y, x), 0.0)
        kx, ky = geometry.index(x[0]), geometry.index(y[0])
        lhs = rho[x[1], kx] * bar[y[1], ky] * rate
        rhs = rho[y[1], ky] * bar[x[1], kx] * back
        worst = max(worst, abs(lhs - rhs))
    return float(worst)


def absorbing_state_check(config: Config, rates: Rates) -> bool:
    """True iff no bond has an occupied source and a vacant target."""
    g = config.geometry
    for b in enumerate_bonds(rates, g):
        if config[b.src] == 1 and config[b.dst] == 0:
            return False
    return True


# ---------------------------------------------------------------------------
# currents


@dataclass(frozen=True)
class FluxEstimate:
    mean: float
    stderr: float
    samples: int

    def z(self, target: float) -> float:
        return _z(self.mean - target, self.stderr)


def _cut_index(geometry: LaneGeometry, cut: int) -> int:
    if not geometry.periodic and not geometry.z_min <= cut < geometry.z_max:
        raise ValueError("cut must have both neighbouring columns inside a closed window")
    return geometry.index(cut)


def empirical_flux(trajectories: Trajectory | Sequence[Trajectory], cut: int | None = None
                   ) -> FluxEstimate:
    """Mean net rightward crossings per unit time at ``cut`` (all cuts averaged if None).

    Several trajectories give a mean and standard error across them. A single trajectory
    gives batch means over its snapshot intervals.
    """
    if isinstance(trajectories, Trajectory):
        tr = trajectories
        g = tr.final.geometry
        k = None if cut is None else _cut_index(g, cut)
        times = np.concatenate([[0.0], tr.times])
        xs = np.vstack([np.zeros(g.length, np.int64), tr.crossings])
        per_cut = xs if k is None else xs[:, [k]]
        inc = np.diff(per_cut.mean(axis=1))
        dt = np.diff(times)
        keep = dt > 0
        rates_ = inc[keep] / dt[keep]
        if len(rates_) == 0:
            return FluxEstimate(0.0, math.nan, 0)
        mean = float(inc[keep].sum() / dt[keep].sum())
        se = float(rates_.std(ddof=1) / math.sqrt(len(rates_))) if len(rates_) > 1 else math.nan
        return FluxEstimate(mean, se, len(rates_))
    vals = []
    for tr in trajectories:
        g = tr.final.geometry
        x = tr.crossings[-1] if len(tr.crossings) else np.zeros(g.length)
        if tr.times and tr.times[-1] != tr.T:
            raise ValueError("trajectories must record a snapshot at T")
        v = x.mean() if cut is None else x[_cut_index(g, cut)]
        vals.append(v / tr.T)
    v = np.asarray(vals, float)
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.nan
    return FluxEstimate(float(v.mean()), se, len(v))


def batch_flux(batch: RunBatch, cut: int | None = None) -> FluxEstimate:
    """Current estimate from a replica batch: per-replica crossings over ``T``."""
    g = batch.geometry
    if batch.T <= 0:
        raise ValueError("need T > 0")
    x = batch.crossings if cut is None else batch.crossings[:, [_cut_index(g, cut)]]
    if not g.periodic and cut is None:
        x = x[:, :-1]  # the last cut of a closed window has no bond
    v = x.mean(axis=1) / batch.T
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.nan
    return FluxEstimate(float(v.mean()), se, len(v))


# ---------------------------------------------------------------------------
# profiles


@dataclass
class ProfileEstimate:
    columns: np.ndarray
    density: np.ndarray  # (n, L)
    stderr: np.ndarray  # (n, L)
    replicas: int

    def band(self, k: float = 3.0) -> tuple[np.ndarray, np.ndarray]:
        return np.clip(self.density - k * self.stderr, 0, 1), np.clip(self.density + k * self.stderr, 0, 1)

    def tails(self, fraction: float = 0.1) -> tuple[slice, slice]:
        w = max(1, int(round(fraction * len(self.columns))))
        return slice(0, w), slice(len(self.columns) - w, len(self.columns))

    def z_scores(self, expected: np.ndarray, where: slice | None = None) -> np.ndarray:
        """Standardised deviation from ``expected`` using the binomial variance under the
        expected value (floored at one count) so that exact 0/1 columns are testable."""
        sl = where or slice(None)
        e = np.asarray(expected, float)[:, sl]
        m = self.density[:, sl]
        R = self.replicas
        sd = np.sqrt(np.maximum(e * (1 - e), 1.0 / R) / R)
        return (m - e) / sd

    def tail_check(self, left: Sequence[float], right: Sequence[float], k: float = 3.0,
                   fraction: float = 0.1) -> bool:
        """Outer-column averages per lane against the asymptotic lane densities."""
        lo, hi = self.tails(fraction)
        R = self.replicas
        for sl, target in ((lo, left), (hi, right)):
            w = sl.stop - sl.start
            for i, t in enumerate(target):
                m = self.density[i, sl].mean()
                sd = math.sqrt(max(t * (1 - t), 1.0 / R) / (R * w))
                if abs(m - t) > k * sd:
                    return False
        return True


def shock_profile(spec: MeasureSpec, rates: Rates, geometry: LaneGeometry, T: float,
                  replicas: int = 200, seed: int = 0, jobs: int | None = 1) -> ProfileEstimate:
    if geometry.periodic:
        raise ValueError("shock profiles are estimated on a closed window")
    batch = run_batch(spec, rates, geometry, T, replicas, seed, jobs)
    x = batch.occT.astype(float)
    m = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.zeros_like(m)
    return ProfileEstimate(geometry.columns, m, se, replicas)


# ---------------------------------------------------------------------------
# rotation invariance on the torus


def rotation_invariance_test(spec_or_config, rates: MultiLaneRates, geometry: LaneGeometry,
                             T: float, replicas: int = 200, seed: int = 0, alpha: float = ALPHA,
                             jobs: int | None = 1) -> StationarityReport:
    """Paired test that each lane's observables match those of the next lane at time ``T``."""
    if not isinstance(rates, MultiLaneRates):
        raise ValueError("rotation invariance is a torus property")
    if not rates.lane_independent:
        raise ValueError("rotation invariance needs lane-independent horizontal rates")
    batch = run_batch(spec_or_config, rates, geometry, T, replicas, seed, jobs)
    obs = observables(batch.occT, geometry)
    n = geometry.n_lanes
    lane_obs = {k: v for k, v in obs.items() if k.count(",") == 0}
    rotated = {}
    for k in lane_obs:
        base, idx = k.split("[")
        i = int(idx.rstrip("]"))
        rotated[k] = obs[f"{base}[{(i + 1) % n}]"]
    names, m0, s0, m1, s1, zs, thr, ok = compare_samples(lane_obs, rotated, paired=True,
                                                         alpha=alpha)
    return StationarityReport(names, m0, s0, m1, s1, zs, alpha, thr, ok, replicas, seed,
                              float(T), True, {"compare": "lane i vs lane i+1 at time T"})


def lane_density_check(batch: RunBatch, expected: Sequence[float], k: float = 3.0
                       ) -> tuple[bool, np.ndarray]:
    """Per-lane mean densities at time ``T`` against ``expected`` within ``k`` standard errors."""
    x = batch.occT.astype(float).mean(axis=2)  # (R, n)
    m = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / math.sqrt(len(x))
    z = np.array([_z(a - b, s) for a, b, s in zip(m, expected, se)])
    return bool(np.all(np.abs(z) <= k)), z


def default_T(rates: Rates, geometry: LaneGeometry, factor: float = 20.0) -> float:
    """Mixing heuristic ``factor * L / (rate mass per site)``."""
    lam = bond_table(rates, geometry).total / (geometry.n_lanes * geometry.length)
    return factor * geometry.length / lam


