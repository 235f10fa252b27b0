"""Invariant-measure families: the F-curve parametrisation, reversible profiles and samplers."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Union

import numpy as np

from .kernels import MultiLaneRates, Rates, TwoLaneRates
from .lattice import Config, LaneGeometry, VTopology, H2_batch
from .rng import make_rng


class RejectionBudgetExceeded(RuntimeError):
    def __init__(self, tries: int, accepted: int):
        self.tries = tries
        self.acceptance_rate = accepted / tries if tries else 0.0
        super().__init__(
            f"conditioned sampler gave up after {tries} draws "
            f"(acceptance rate {self.acceptance_rate:.3g})"
        )


class SingularRatio(ValueError):
    """Density ratio is 0 or infinite: configurations differ where the measure is degenerate."""


# ---------------------------------------------------------------------------
# F-curve


def _pq(rates) -> tuple[float, float]:
    if isinstance(rates, TwoLaneRates):
        return rates.p, rates.q
    p, q = rates
    return float(p), float(q)


def _rho0_scalar(p: float, q: float, rho: float) -> float:
    if p == q:
        return rho / 2
    if q == 0:
        return max(rho - 1.0, 0.0)
    if p == 0:
        return min(rho, 1.0)
    k = (q - p) / (q + p)
    return rho / 2 + k * rho * (2.0 - rho) / (2.0 * (1.0 + math.sqrt(1.0 + k * k * rho * (rho - 2.0))))


def rho0_of_total(p: float, q: float, rho):
    """Lane-0 density on the F-curve at total density ``rho`` (vectorised over ``rho``)."""
    rho = np.asarray(rho, dtype=float)
    if p == q:
        return rho / 2
    if q == 0:
        return np.maximum(rho - 1.0, 0.0)
    if p == 0:
        return np.minimum(rho, 1.0)
    k = (q - p) / (q + p)  # (r-1)/(r+1) without overflowing r = q/p
    psi = 1.0 + k * k * rho * (rho - 2.0)
    # (1 - sqrt(psi)) / (2k) rewritten without the 0/0 near r = 1
    return rho / 2 + k * rho * (2.0 - rho) / (2.0 * (1.0 + np.sqrt(psi)))


def _exact_split(rho: float, rho0: float) -> tuple[float, float]:
    # subtract the larger share: rho - big is exact (Sterbenz) when big >= rho / 2,
    # so the two shares then add back to rho exactly
    if rho0 >= rho / 2:
        return rho0, rho - rho0
    rho1 = rho - rho0
    return rho - rho1, rho1


def solve_F(rates, rho: float) -> tuple[float, float]:
    """The unique ``(rho0, rho1)`` with ``p rho0 (1-rho1) = q rho1 (1-rho0)`` and ``rho0 + rho1 = rho``.

    ``rates`` is a :class:`TwoLaneRates` or a ``(p, q)`` pair.
    """
    p, q = _pq(rates)
    if p + q <= 0:
        raise ValueError("p + q must be positive")
    rho = float(rho)
    if not 0.0 <= rho <= 2.0:
        raise ValueError(f"total density must lie in [0, 2], got {rho}")
    rho0 = min(max(_rho0_scalar(p, q, rho), rho - 1.0, 0.0), rho, 1.0)
    return _exact_split(rho, rho0)


def F_residual(p: float, q: float, rho0, rho1):
    return p * rho0 * (1 - rho1) - q * rho1 * (1 - rho0)


# ---------------------------------------------------------------------------
# reversible product profiles


def _odds_to_rho(odds):
    odds = np.asarray(odds, dtype=float)
    return odds / (1.0 + odds), 1.0 / (1.0 + odds)


def common_theta(rates: Rates) -> float:
    """``theta = d_i / l_i``, required to be the same on every lane."""
    if any(l <= 0 for l in rates.l):
        raise ValueError("theta profile needs l_i > 0 on every lane")
    ratios = [d / l for d, l in zip(rates.d, rates.l)]
    if not np.allclose(ratios, ratios[0], rtol=1e-12, atol=0):
        raise ValueError(f"theta mismatch between lanes: {ratios}")
    return ratios[0]


def vertical_ratio(rates: Rates) -> float:
    if isinstance(rates, MultiLaneRates):
        return 1.0
    if rates.q <= 0 or rates.p <= 0:
        raise ValueError("vertical ratio p/q needs p, q > 0")
    return rates.p / rates.q


def blocking_profile(rates: Rates, site: tuple[int, int], c: float = 1.0) -> float:
    """Density ``c theta^z lam^i / (1 + c theta^z lam^i)`` at ``site = (z, i)``.

    ``lam = p/q`` for two lanes and 1 on the torus.
    """
    theta = common_theta(rates)
    lam = vertical_ratio(rates)
    if c <= 0:
        raise ValueError("c must be positive")
    z, i = site
    return float(_odds_to_rho(c * theta**z * lam**i)[0])


def single_lane_profile(d: float, l: float, z, c: float = 1.0, n: int = 0):
    """Single-lane reversible profile: ASEP fugacity form if ``l > 0``, TASEP step form if ``l = 0``."""
    z = np.asarray(z)
    if l > 0:
        if c <= 0:
            raise ValueError("c must be positive")
        return _odds_to_rho(c * (d / l) ** z.astype(float))[0]
    if d <= 0:
        raise ValueError("need d > 0 when l = 0")
    if c < 0:
        raise ValueError("c must be nonnegative")
    return np.where(z > n, 1.0, np.where(z == n, c / (1.0 + c), 0.0))


# ---------------------------------------------------------------------------
# measure specifications


@dataclass(frozen=True)
class TwoRateBernoulli:
    rho0: float
    rho1: float


@dataclass(frozen=True)
class BernoulliTotal:
    """Translation-invariant product measure with total density ``rho`` per column.

    Two lanes split ``rho`` along the F-curve for ``(p, q)``; more lanes get ``rho / n`` each.
    """

    rho: float
    n_lanes: int = 2
    p: float = 1.0
    q: float = 1.0


@dataclass(frozen=True)
class ReversibleProfile:
    theta: float
    c: float = 1.0
    lam: float = 1.0
    center: int = 0


@dataclass(frozen=True)
class ConditionedBlocking:
    """Reversible profile conditioned on ``H2 = 2n`` (``even``) or ``2n + 1`` (``odd``)."""

    kind: str
    n: int
    theta: float
    lam: float = 1.0
    c: float = 1.0


@dataclass(frozen=True)
class PartialBlocking:
    """One lane frozen, the other a single-lane blocking measure with rates ``(d, l)``.

    ``top_empty``: lane 0 empty, lane 1 blocking. ``bottom_full``: lane 1 full, lane 0
    blocking. ``top_empty_reflected``: lane 0 empty, lane 1 the mirror image of the
    blocking measure of the reflected lane-1 process.
    """

    kind: str
    n: int
    d: float
    l: float
    c: float = 1.0


@dataclass(frozen=True)
class DiracStep:
    i: float
    j: float


@dataclass(frozen=True)
class TasepPairBlocking:
    kind: str  # "breve" or "hat"
    z: int
    p: float
    q: float


@dataclass(frozen=True)
class MultilaneBlocking:
    i: int
    n_lanes: int
    variant: str = "uniform_subset"  # or "conditioned_profile"
    theta: float = 2.0
    c: float = 1.0


MeasureSpec = Union[
    TwoRateBernoulli,
    BernoulliTotal,
    ReversibleProfile,
    ConditionedBlocking,
    PartialBlocking,
    DiracStep,
    TasepPairBlocking,
    MultilaneBlocking,
]

FAMILIES = {
    cls.__name__: cls
    for cls in (
        TwoRateBernoulli,
        BernoulliTotal,
        ReversibleProfile,
        ConditionedBlocking,
        PartialBlocking,
        DiracStep,
        TasepPairBlocking,
        MultilaneBlocking,
    )
}
PRODUCT_TRANSLATION_INVARIANT = (TwoRateBernoulli, BernoulliTotal)
PARTIAL_KINDS = ("top_empty", "bottom_full", "top_empty_reflected")


def _enc(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def spec_to_json(spec: MeasureSpec) -> dict:
    return {"family": type(spec).__name__, **{k: _enc(v) for k, v in asdict(spec).items()}}


def spec_from_json(obj: dict) -> MeasureSpec:
    obj = dict(obj)
    try:
        cls = FAMILIES[obj.pop("family")]
    except KeyError as e:
        raise ValueError(f"unknown or missing measure family: {e}") from None
    names = {f.name for f in fields(cls)}
    if set(obj) - names:
        raise ValueError(f"unknown fields for {cls.__name__}: {sorted(set(obj) - names)}")
    kw = {k: (float(v) if v in ("inf", "-inf") else v) for k, v in obj.items()}
    return cls(**kw)


def multilane_nu_rho(n: int, rho: float) -> BernoulliTotal:
    if not 0 <= rho <= n:
        raise ValueError(f"rho must lie in [0, {n}], got {rho}")
    return BernoulliTotal(rho, n_lanes=n)


def nu_rho(rates: TwoLaneRates, rho: float) -> BernoulliTotal:
    """Two-lane translation-invariant stationary measure with total density ``rho``."""
    return BernoulliTotal(rho, 2, rates.p, rates.q)


def partial_blocking(kind: str, n: int, rates: TwoLaneRates, c: float = 1.0) -> PartialBlocking:
    """Pick the active-lane rates for a partial blocking measure from two-lane rates.

    A totally asymmetric active lane gets ``c = 0`` (the extremal Dirac step).
    """
    if kind == "bottom_full":
        d, l = rates.d0, rates.l0
    elif kind == "top_empty":
        d, l = rates.d1, rates.l1
    elif kind == "top_empty_reflected":
        # blocking measure of the mirrored lane-1 process, reflected back
        d, l = rates.l1, rates.d1
    else:
        raise ValueError(f"unknown partial blocking kind {kind!r}")
    return PartialBlocking(kind, n, d, l, c if l > 0 else 0.0)


def lane_densities(spec: BernoulliTotal | TwoRateBernoulli) -> np.ndarray:
    if isinstance(spec, TwoRateBernoulli):
        return np.array([spec.rho0, spec.rho1], dtype=float)
    if spec.n_lanes == 2:
        return np.array(solve_F((spec.p, spec.q), spec.rho))
    if not 0 <= spec.rho <= spec.n_lanes:
        raise ValueError("rho out of range")
    return np.full(spec.n_lanes, spec.rho / spec.n_lanes)


def product_marginals(spec: MeasureSpec, geometry: LaneGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Site densities ``rho`` and ``1 - rho`` (computed without cancellation) of the product
    measure underlying ``spec``; conditioned families return their unconditioned profile."""
    n, z = geometry.n_lanes, geometry.columns
    if isinstance(spec, (TwoRateBernoulli, BernoulliTotal)):
        dens = lane_densities(spec)
        if len(dens) != n:
            raise ValueError("measure and geometry disagree on the number of lanes")
        if np.any((dens < 0) | (dens > 1)):
            raise ValueError("lane densities must lie in [0, 1]")
        rho = np.repeat(dens[:, None], geometry.length, axis=1)
        return rho, 1.0 - rho
    if isinstance(spec, (ReversibleProfile, ConditionedBlocking)):
        if spec.theta <= 0 or spec.c <= 0 or spec.lam <= 0:
            raise ValueError("theta, c and lam must be positive")
        center = getattr(spec, "center", 0)
        lanes = np.arange(n, dtype=float)[:, None]
        odds = spec.c * spec.theta ** (z[None, :] - center).astype(float) * spec.lam**lanes
        return _odds_to_rho(odds)
    if isinstance(spec, MultilaneBlocking) and spec.variant == "conditioned_profile":
        odds = spec.c * spec.theta ** z.astype(float)
        rho, bar = _odds_to_rho(np.repeat(odds[None, :], n, axis=0))
        return rho, bar
    if isinstance(spec, PartialBlocking):
        if n != 2:
            raise ValueError("partial blocking measures live on two lanes")
        if spec.kind not in PARTIAL_KINDS:
            raise ValueError(f"unknown partial blocking kind {spec.kind!r}")
        zz = -z if spec.kind == "top_empty_reflected" else z
        if spec.l > 0:
            act, act_bar = _odds_to_rho(spec.c * (spec.d / spec.l) ** zz.astype(float))
        else:
            act = single_lane_profile(spec.d, spec.l, zz, c=spec.c, n=spec.n)
            act_bar = 1.0 - act
        if spec.kind == "bottom_full":
            rho = np.vstack([act, np.ones_like(act)])
            bar = np.vstack([act_bar, np.zeros_like(act)])
        else:
            rho = np.vstack([np.zeros_like(act), act])
            bar = np.vstack([np.ones_like(act), act_bar])
        return rho, bar
    if isinstance(spec, DiracStep):
        rho = eta_bot(geometry, spec.i, spec.j).occ.astype(float)
        return rho, 1.0 - rho
    raise ValueError(f"{type(spec).__name__} is not a product-form measure")


# ---------------------------------------------------------------------------
# special configurations


def eta_bot(geometry: LaneGeometry, i: float, j: float) -> Config:
    """Lane 0 is ``1{z > i}``, lane 1 is ``1{z > j}``; infinite indices give empty/full lanes."""
    if geometry.n_lanes != 2:
        raise ValueError("eta_bot is a two-lane configuration")
    cols = geometry.columns
    return Config(geometry, np.vstack([cols > i, cols > j]).astype(np.uint8))


def eta_A(geometry: LaneGeometry, A) -> Config:
    """Full at columns >= 0, plus particles at column -1 on lanes in ``A``."""
    occ = np.zeros((geometry.n_lanes, geometry.length), np.uint8)
    occ[:, geometry.columns >= 0] = 1
    for a in A:
        occ[a, geometry.index(-1)] = 1
    return Config(geometry, occ)


def single_lane_H(lane: np.ndarray, geometry: LaneGeometry, origin: int = 0) -> np.ndarray:
    """Single-lane height ``sum_{z<=0} eta - sum_{z>0} (1 - eta)`` for arrays of shape (..., L)."""
    k = origin - geometry.z_min + 1
    return lane[..., :k].sum(axis=-1, dtype=np.int64) - (
        (geometry.length - k) - lane[..., k:].sum(axis=-1, dtype=np.int64)
    )


# ---------------------------------------------------------------------------
# sampling


def _require_closed(spec, geometry):
    if geometry.periodic:
        raise ValueError(f"{type(spec).__name__} lives on a closed window")


def _draw_products(rho, gen, size):
    return (gen.random((size,) + rho.shape) < rho).astype(np.uint8)


def _conditioned(rho, gen, size, stat, target, max_draws, chunk=512):
    out = np.empty((size,) + rho.shape, np.uint8)
    got = tried = 0
    while got < size:
        if tried >= max_draws:
            raise RejectionBudgetExceeded(tried, got)
        batch = _draw_products(rho, gen, chunk)
        tried += chunk
        ok = batch[stat(batch) == target]
        take = min(len(ok), size - got)
        out[got : got + take] = ok[:take]
        got += take
    return out


def sample_batch(
    spec: MeasureSpec, geometry: LaneGeometry, size: int, seed, max_draws: int = 2_000_000
) -> np.ndarray:
    """``size`` independent exact draws as a uint8 array of shape (size, n_lanes, L)."""
    gen = make_rng(seed)
    n, L = geometry.n_lanes, geometry.length

    if isinstance(spec, PRODUCT_TRANSLATION_INVARIANT):
        if not geometry.periodic:
            raise ValueError("translation-invariant product measures live on a periodic window")
        rho, _ = product_marginals(spec, geometry)
        return _draw_products(rho, gen, size)

    if isinstance(spec, ReversibleProfile):
        _require_closed(spec, geometry)
        return _draw_products(product_marginals(spec, geometry)[0], gen, size)

    if isinstance(spec, ConditionedBlocking):
        _require_closed(spec, geometry)
        if spec.kind not in ("even", "odd"):
            raise ValueError("ConditionedBlocking kind is 'even' or 'odd'")
        target = 2 * spec.n + (spec.kind == "odd")
        rho = product_marginals(spec, geometry)[0]
        return _conditioned(rho, gen, size, lambda b: H2_batch(b, geometry), target, max_draws)

    if isinstance(spec, PartialBlocking):
        _require_closed(spec, geometry)
        rho = product_marginals(spec, geometry)[0]
        act = 0 if spec.kind == "bottom_full" else 1
        if spec.l == 0:
            return _draw_products(rho, gen, size)
        if spec.kind == "top_empty_reflected":
            def stat(b):
                return single_lane_H(b[:, act, ::-1], geometry)
        else:
            def stat(b):
                return single_lane_H(b[:, act], geometry)
        return _conditioned(rho, gen, size, stat, spec.n, max_draws)

    if isinstance(spec, DiracStep):
        _require_closed(spec, geometry)
        if spec.i < spec.j:
            raise ValueError("DiracStep requires i >= j")
        return np.repeat(eta_bot(geometry, spec.i, spec.j).occ[None], size, axis=0)

    if isinstance(spec, TasepPairBlocking):
        _require_closed(spec, geometry)
        if n != 2:
            raise ValueError("TASEP pair blocking measures live on two lanes")
        base = eta_bot(geometry, spec.z, spec.z).occ
        out = np.repeat(base[None], size, axis=0)
        if spec.kind == "breve":
            return out
        if spec.kind != "hat":
            raise ValueError("TasepPairBlocking kind is 'breve' or 'hat'")
        if spec.p + spec.q <= 0:
            raise ValueError("need p + q > 0")
        lane = (gen.random(size) < spec.p / (spec.p + spec.q)).astype(int)
        out[np.arange(size), lane, geometry.index(spec.z)] = 1
        return out

    if isinstance(spec, MultilaneBlocking):
        _require_closed(spec, geometry)
        if spec.n_lanes != n or geometry.v_topology is not VTopology.TORUS:
            raise ValueError("multilane blocking measures live on a torus of matching size")
        if not 0 <= spec.i < n:
            raise ValueError(f"i must lie in [0, {n})")
        if spec.variant == "uniform_subset":
            out = np.repeat(eta_A(geometry, ()).occ[None], size, axis=0)
            col = geometry.index(-1)
            for k in range(size):
                out[k, gen.permutation(n)[: spec.i], col] = 1
            return out
        if spec.variant == "conditioned_profile":
            rho = product_marginals(spec, geometry)[0]
            return _conditioned(rho, gen, size, lambda b: H2_batch(b, geometry), spec.i, max_draws)
        raise ValueError(f"unknown multilane blocking variant {spec.variant!r}")

    raise TypeError(f"not a measure spec: {spec!r}")


def sample(spec: MeasureSpec, geometry: LaneGeometry, seed, max_draws: int = 2_000_000) -> Config:
    """One exact draw from ``spec`` on ``geometry``."""
    return Config(geometry, sample_batch(spec, geometry, 1, seed, max_draws)[0])


# ---------------------------------------------------------------------------
# density ratios


def log_density_ratio(spec: MeasureSpec, a: Config, b: Config) -> float:
    """``log mu(a) / mu(b)`` for a product-form ``spec``, via site-wise odds."""
    if a.geometry != b.geometry:
        raise ValueError("configurations live on different windows")
    rho, bar = product_marginals(spec, a.geometry)
    diff = a.occ.astype(np.int64) - b.occ.astype(np.int64)
    mask = diff != 0
    if not mask.any():
        return 0.0
    r, rb = rho[mask], bar[mask]
    if np.any(r == 0) or np.any(rb == 0):
        raise SingularRatio("configurations differ at a site where the density is 0 or 1")
    return float(np.sum(diff[mask] * (np.log(r) - np.log(rb))))
