"""Self-check suites run by ``verify``; each pairs its checks with a negative control."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import analysis as an
from .dynamics import CoupledConfig, run_coupled, ordered
from .flux import FluxCurve, classify_R0, in_Z, r0
from .kernels import MultiLaneRates, TwoLaneRates
from .lattice import Config, LaneGeometry
from .measures import (
    BernoulliTotal,
    ConditionedBlocking,
    DiracStep,
    ReversibleProfile,
    TwoRateBernoulli,
    multilane_nu_rho,
    partial_blocking,
)
from .rng import make_rng, replica_seed

Check = tuple[str, bool, str]


def invariance(seed: int = 1, jobs: int | None = 1) -> list[Check]:
    rates = TwoLaneRates(1.5, 0.5, 1.0, 0.25, 3.0, 1.0)
    g = LaneGeometry.ring(64)
    out = []
    for rho in (0.5, 1.0, 1.5):
        rep = an.stationarity_test(BernoulliTotal(rho, p=rates.p, q=rates.q), rates, g, 50.0,
                                   200, seed, jobs=jobs)
        out.append((f"Bernoulli rho={rho} stationary", rep.passed, f"max|z|={max(map(abs, rep.z)):.2f}"))
    rep = an.stationarity_test(TwoRateBernoulli(0.5, 0.5), rates, g, 50.0, 200, seed + 1, jobs=jobs)
    out.append(("control off the F-curve rejected", not rep.passed, f"max|z|={max(map(abs, rep.z)):.1f}"))
    return out


def reversibility(seed: int = 1, jobs: int | None = 1) -> list[Check]:
    g = LaneGeometry.closed(50)
    rates = TwoLaneRates(2.0, 1.0, 1.0, 0.5, 3.0, 1.5)
    out = []
    res = an.detailed_balance_check(ReversibleProfile(2.0, c=1.0, lam=2.0), rates, g)
    out.append(("theta profile", res < 1e-14, f"residual={res:.2e}"))
    for kind, rr in (("top_empty", TwoLaneRates(1, 1, 2, 1, 1, 0)),
                     ("bottom_full", TwoLaneRates(2, 1, 1, 1, 1, 0)),
                     ("top_empty_reflected", TwoLaneRates(1, 1, 1, 2, 1, 0))):
        res = an.detailed_balance_check(partial_blocking(kind, 0, rr), rr, g)
        out.append((f"partial blocking {kind}", res < 1e-14, f"residual={res:.2e}"))
    bad = TwoLaneRates(2.0, 1.0, 3.0, 1.0, 3.0, 1.5)
    res = an.detailed_balance_check(ReversibleProfile(2.0, lam=2.0), bad, g)
    out.append(("control with lane-mismatched theta", res > 1e-6, f"residual={res:.2e}"))
    return out


def coupling(seed: int = 1, jobs: int | None = 1, runs: int = 200) -> list[Check]:
    gen = make_rng(replica_seed(seed, 1 << 41))
    g = LaneGeometry.closed(7)
    order_viol = creations = monotone_viol = coalescences = 0
    for k in range(runs):
        v = gen.uniform(0, 2, 6)
        rates = TwoLaneRates(*v[:4], v[4] + 0.1, v[5])
        xi = (gen.random((2, g.length)) < 0.6).astype(np.uint8)
        eta = xi & (gen.random((2, g.length)) < 0.7)
        if k % 2:  # unordered pairs exercise coalescence
            eta = (gen.random((2, g.length)) < 0.5).astype(np.uint8)
        cc = CoupledConfig(Config(g, eta), Config(g, xi))
        tr = run_coupled(cc, rates, 5.0, seed=replica_seed(seed, k), snapshots=[1, 2, 3, 4, 5])
        if k % 2 == 0:
            order_viol += sum(not ordered(c) for c in tr.snapshots)
        D = [cc.D] + tr.D
        monotone_viol += sum(b > a for a, b in zip(D, D[1:]))
        creations += tr.creations
        coalescences += tr.coalescences
    return [
        ("order preserved", order_viol == 0, f"violations={order_viol}"),
        ("no discrepancy created", creations == 0 and monotone_viol == 0,
         f"creations={creations}, D increases={monotone_viol}"),
        ("control: coalescences observed", coalescences > 0, f"coalescences={coalescences}"),
    ]


def shocks(seed: int = 1, jobs: int | None = 1) -> list[Check]:
    out = []
    c = classify_R0(FluxCurve.normalized(0.5, 0.5))
    got = [s.as_list() for s in c.R0]
    ok = len(got) == 1 and np.allclose(got[0], [0.5, 1.5], atol=1e-9)
    out.append(("R0 at r=0.5", ok, str(got)))
    c = classify_R0(FluxCurve.normalized(0.5, 0.03))
    out.append(("R0 empty at r=0.03", c.R0 == [], str(c.to_json()["R0"])))
    flip = in_Z(0.5, r0() - 1e-3) and not in_Z(0.5, r0() + 1e-3)
    out.append(("Z boundary at r0", flip, f"r0={r0():.6f}"))
    g = LaneGeometry.closed(30)
    rates = TwoLaneRates(2.0, 1.0, 1.0, 0.5, 2.0, 1.0)
    prof = an.shock_profile(ConditionedBlocking("even", 0, 2.0, lam=2.0), rates, g, 20.0, 200, seed)
    out.append(("blocking tails 0 and 1", prof.tail_check([0, 0], [1, 1]), ""))
    prof = an.shock_profile(DiracStep(3, -2), rates, g, 0.0, 10, seed)
    out.append(("control: wrong tails rejected", not prof.tail_check([1, 1], [0, 0]), ""))
    return out


def multilane(seed: int = 1, jobs: int | None = 1) -> list[Check]:
    rates = MultiLaneRates((1.5, 1.5, 1.5), (0.5, 0.5, 0.5), (0.0, 1.0, 0.5))
    g = LaneGeometry.ring(64, n_lanes=3)
    rep = an.stationarity_test(multilane_nu_rho(3, 1.2), rates, g, 30.0, 200, seed, jobs=jobs)
    out = [("nu_rho stationary", rep.passed, f"max|z|={max(map(abs, rep.z)):.2f}")]
    rep = an.rotation_invariance_test(multilane_nu_rho(3, 1.2), rates, g, 30.0, 200, seed + 1)
    out.append(("rotation invariant", rep.passed, f"max|z|={max(map(abs, rep.z)):.2f}"))
    occ = np.zeros((3, 64), np.uint8)
    occ[0, ::2] = 1
    rep = an.rotation_invariance_test(Config(g, occ), rates, g, 0.0, 20, seed + 2)
    out.append(("control: lane-biased start rejected", not rep.passed, ""))
    return out


SUITES: dict[str, Callable[..., list[Check]]] = {
    "invariance": invariance,
    "reversibility": reversibility,
    "coupling": coupling,
    "shocks": shocks,
    "multilane": multilane,
}

