import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm
from scipy.stats import norm

from multilane_sep.dynamics import (
    CoupledConfig, Mark, PairOrder, bond_table, classify_pair, count_discrepancies,
    evolve_batch, evolve_parallel, ordered, run, run_coupled, track_tagged_discrepancy,
)
from multilane_sep.kernels import MultiLaneRates, Symmetry, TwoLaneRates, apply_symmetry
from multilane_sep.lattice import Config, LaneGeometry, H2
from multilane_sep.rng import replica_seed

RATES = TwoLaneRates(1.5, 0.5, 1.0, 0.25, 2.0, 1.0)
VERTICAL_ONLY = TwoLaneRates(0, 0, 0, 0, 1, 0, require_motion=False)


def test_trivial_runs():
    g = LaneGeometry.closed(5)
    tr = run(Config.empty(g), RATES, 10.0, seed=1)
    assert tr.final == Config.empty(g) and tr.accepted == 0 and tr.attempted > 0
    tr = run(Config.full(g), RATES, 10.0, seed=1)
    assert tr.final == Config.full(g) and tr.accepted == 0
    assert run(Config.full(g), RATES, 0.0, seed=1).attempted == 0
    with pytest.raises(ValueError):
        run(Config.empty(g), RATES, -1.0)
    with pytest.raises(ValueError):
        run(Config.empty(g), RATES, 1.0, snapshots=[2.0])


def test_two_state_chain():
    g = LaneGeometry.closed(0)
    start = Config.from_sites(g, [(0, 0)])
    R, T = 10_000, 0.7
    occ = np.repeat(start.occ[None], R, axis=0)
    final, _ = evolve_batch(occ, VERTICAL_ONLY, g, T, [replica_seed(3, k) for k in range(R)])
    frac = final[:, 1, 0].mean()
    p = 1 - math.exp(-T)
    assert abs(frac - p) < 3 * math.sqrt(p * (1 - p) / R)


def _generator(rates: TwoLaneRates, g: LaneGeometry, n_particles: int):
    """Brute-force Q-matrix on a closed window, written from the jump rules directly."""
    sites = [(i, k) for i in range(2) for k in range(g.length)]
    states = [frozenset(c) for c in itertools.combinations(sites, n_particles)]
    index = {s: n for n, s in enumerate(states)}
    Q = np.zeros((len(states), len(states)))
    moves = [((0, 1), rates.d0), ((0, -1), rates.l0), ((1, 1), rates.d1), ((1, -1), rates.l1)]
    for s in states:
        for (i, k) in s:
            targets = [((i, k + dk), rate) for (lane, dk), rate in moves if lane == i]
            targets.append(((1 - i, k), rates.p if i == 0 else rates.q))
            for (j, m), rate in targets:
                if rate > 0 and 0 <= m < g.length and (j, m) not in s:
                    t = (s - {(i, k)}) | {(j, m)}
                    Q[index[s], index[t]] += rate
    Q -= np.diag(Q.sum(axis=1))
    return states, Q


def test_law_at_time_T_matches_matrix_exponential():
    g = LaneGeometry.closed(1)
    states, Q = _generator(RATES, g, 2)
    start = frozenset({(0, 0), (1, 2)})
    T, R = 0.8, 20_000
    exact = expm(Q * T)[states.index(start)]
    occ0 = np.zeros((2, g.length), np.uint8)
    for i, k in start:
        occ0[i, k] = 1
    final, _ = evolve_batch(np.repeat(occ0[None], R, axis=0), RATES, g, T,
                            [replica_seed(5, k) for k in range(R)])
    keys = [frozenset(map(tuple, np.argwhere(f))) for f in final]
    counts = np.array([sum(k == s for k in keys) for s in states], float) / R
    se = np.sqrt(np.maximum(exact * (1 - exact), 1e-12) / R)
    assert np.all(np.abs(counts - exact) < norm.isf(0.01 / (2 * len(states))) * se + 1e-12)


def test_determinism_and_batch_agreement():
    g = LaneGeometry.ring(32)
    gen = np.random.default_rng(0)
    start = Config(g, gen.random((2, 32)) < 0.5)
    a = run(start, RATES, 5.0, seed=42, snapshots=[1.0, 5.0])
    b = run(start, RATES, 5.0, seed=42, snapshots=[1.0, 5.0])
    assert a.to_json() == b.to_json()
    assert run(start, RATES, 5.0, seed=43).final != a.final
    single = run(start, RATES, 5.0, seed=7)
    batch, cross = evolve_batch(start.occ[None], RATES, g, 5.0, [7])
    assert np.array_equal(batch[0], single.final.occ)
    assert np.array_equal(cross[0], single.crossings[-1])
    occ = np.repeat(start.occ[None], 6, axis=0)
    seeds = [replica_seed(1, k) for k in range(6)]
    s1, c1 = evolve_batch(occ, RATES, g, 3.0, seeds)
    s2, c2 = evolve_parallel(occ, RATES, g, 3.0, seeds, jobs=2)
    assert np.array_equal(s1, s2) and np.array_equal(c1, c2)


@settings(max_examples=30)
@given(st.integers(0, 2**32), st.floats(0.0, 3.0))
def test_conservation_and_crossings(seed, T):
    g = LaneGeometry.closed(6)
    gen = np.random.default_rng(seed)
    start = Config(g, gen.random((2, g.length)) < 0.5)
    tr = run(start, RATES, T, seed=seed, snapshots=[T / 2, T])
    for c, x in zip(tr.snapshots, tr.crossings):
        assert c.occ.dtype == np.uint8 and set(np.unique(c.occ)) <= {0, 1}
        assert c.n_particles == start.n_particles
        assert H2(c) == H2(start)
        # net flow through the cut between k and k+1 is the gain to the right of it
        right_now = np.cumsum(c.occ.sum(axis=0).astype(int)[::-1])[::-1]
        right_then = np.cumsum(start.occ.sum(axis=0).astype(int)[::-1])[::-1]
        assert np.array_equal(x[:-1], right_now[1:] - right_then[1:])


def test_ring_crossings_sum_to_displacement():
    g = LaneGeometry.ring(10)
    start = Config.from_sites(g, [(0, 0)])
    rates = TwoLaneRates(1, 0, 1, 0, 1, 1)
    tr = run(start, rates, 7.0, seed=9)
    assert tr.crossings[-1].min() >= 0
    laps = tr.crossings[-1]
    assert laps.max() - laps.min() <= 1
    z_final = int(np.argwhere(tr.final.occ)[0][1])
    assert (laps.sum()) % 10 == z_final


def test_bond_table_mass():
    g = LaneGeometry.closed(4)
    t = bond_table(RATES, g)
    L = g.length
    expected = 2 * (L - 1) * 0 + (L - 1) * (1.5 + 0.5 + 1.0 + 0.25) + L * (2.0 + 1.0)
    assert t.total == pytest.approx(expected)
    t3 = bond_table(MultiLaneRates((1, 1, 1), (0, 0, 0), (0.5, 0.5, 0.5)), LaneGeometry.ring(5, 3))
    assert t3.total == pytest.approx(3 * 5 * 1 + 5 * 3 * 2 * 0.5)


# ---------------------------------------------------------------------------
# coupling


def test_coupled_examples():
    g = LaneGeometry.closed(5)
    gen = np.random.default_rng(1)
    x = Config(g, gen.random((2, g.length)) < 0.5)
    tr = run_coupled(CoupledConfig(x, x), RATES, 5.0, seed=3, snapshots=[1, 2, 5])
    assert all(c.eta == c.xi for c in tr.snapshots) and tr.coalescences == 0
    # both marginals are the single process with the same clocks
    cc = CoupledConfig(x, Config(g, gen.random((2, g.length)) < 0.5))
    tr = run_coupled(cc, RATES, 4.0, seed=11)
    assert tr.final.eta == run(cc.eta, RATES, 4.0, seed=11).final
    assert tr.final.xi == run(cc.xi, RATES, 4.0, seed=11).final


def test_single_opposite_pair_coalesces():
    g = LaneGeometry.closed(3)
    eta = Config.from_sites(g, [(-2, 0)])
    xi = Config.from_sites(g, [(2, 1)])
    coalesced = 0
    for k in range(200):
        tr = run_coupled(CoupledConfig(eta, xi), RATES, 20.0, seed=k,
                         snapshots=list(np.linspace(0.5, 20, 40)))
        D = [2] + tr.D
        assert all(b <= a for a, b in zip(D, D[1:]))
        assert all(a - b in (0, 2) for a, b in zip(D, D[1:]))
        assert tr.final.D == 2 - 2 * tr.coalescences
        coalesced += tr.coalescences
    assert coalesced > 100


def test_attractiveness_and_no_creation():
    g = LaneGeometry.closed(4)
    gen = np.random.default_rng(77)
    violations = creations = 0
    for k in range(1000):
        v = gen.uniform(0, 2, 6)
        rates = TwoLaneRates(*v[:4], v[4] + 0.05, v[5])
        xi = gen.random((2, g.length)) < 0.6
        eta = xi & (gen.random((2, g.length)) < 0.7)
        if k % 2:
            eta, xi = xi, eta
        cc = CoupledConfig(Config(g, eta), Config(g, xi))
        tr = run_coupled(cc, rates, 2.0, seed=replica_seed(77, k), snapshots=[0.5, 1.0, 2.0])
        violations += sum(not ordered(c) for c in tr.snapshots)
        D = [cc.D] + tr.D
        creations += tr.creations + sum(b > a for a, b in zip(D, D[1:]))
    assert violations == 0 and creations == 0


def test_count_discrepancies():
    g = LaneGeometry.closed(4)
    gen = np.random.default_rng(3)
    x = Config(g, gen.random((2, g.length)) < 0.5)
    assert count_discrepancies(CoupledConfig(x, x), -4, 4) == 0
    hole = tuple(np.argwhere(x.occ == 0)[0])
    extra = x.with_sites([(int(g.z_min + hole[1]), int(hole[0]))])
    assert count_discrepancies(CoupledConfig(extra, x), -4, 4) == 1
    flipped = apply_symmetry(Symmetry.PARTICLE_HOLE, x)
    assert count_discrepancies(CoupledConfig(flipped, x), -4, 4) == 2 * g.length
    with pytest.raises(ValueError):
        count_discrepancies(CoupledConfig(x, x), 2, 1)


def _bowtie_base(g):
    # lane 1 full right of 0, lane 0 empty left of 5, elsewhere a shared pattern
    occ = np.zeros((2, g.length), np.uint8)
    occ[1, g.columns > 0] = 1
    occ[0, g.columns > 5] = 1
    return occ


def test_classify_pair_examples():
    g = LaneGeometry.closed(8)
    base = _bowtie_base(g)
    x = Config(g, base)
    assert classify_pair(CoupledConfig(x, x)) is PairOrder.EQUAL
    eta = x.with_sites([(0, 1)])
    xi = x.with_sites([(5, 0)])
    assert classify_pair(CoupledConfig(eta, xi)) is PairOrder.BOWTIE_CANDIDATE
    assert classify_pair(CoupledConfig(xi, eta)) is PairOrder.BOWTIE_CANDIDATE
    holey = base.copy()
    holey[1, g.index(3)] = 0  # a coupled hole on lane 1 right of the lane-1 discrepancy
    eta = Config(g, holey).with_sites([(0, 1)])
    xi = Config(g, holey).with_sites([(5, 0)])
    assert classify_pair(CoupledConfig(eta, xi)) is PairOrder.SUPINF
    assert classify_pair(CoupledConfig(x, x.with_sites([(5, 0)]))) is PairOrder.LE
    assert classify_pair(CoupledConfig(x.with_sites([(5, 0)]), x)) is PairOrder.GE
    # lane-1 discrepancy to the right of the lane-0 one
    eta, xi = x.with_sites([(-3, 1)]), x.with_sites([(-5, 0)])
    assert classify_pair(CoupledConfig(eta, xi)) is PairOrder.UNORDERED
    eta, xi = x.with_sites([(-3, 1)]), x.with_sites([(-2, 0)])
    assert classify_pair(CoupledConfig(eta, xi)) is PairOrder.SUPINF


def test_registry_marks():
    g = LaneGeometry.closed(2)
    eta = Config.from_sites(g, [(0, 0), (1, 1)])
    xi = Config.from_sites(g, [(0, 0), (2, 0)])
    cc = CoupledConfig(eta, xi)
    assert cc.mark(0, 0) is Mark.COUPLED
    assert cc.mark(1, 1) is Mark.ETA_DISC
    assert cc.mark(2, 0) is Mark.XI_DISC
    assert cc.mark(-1, 0) is Mark.HOLE
    assert cc.D == 2
    with pytest.raises(ValueError):
        CoupledConfig(eta, Config.empty(LaneGeometry.closed(3)))


# ---------------------------------------------------------------------------
# tagged discrepancy


def test_tagged_vertical_only_keeps_column():
    g = LaneGeometry.closed(3)
    cc = CoupledConfig(Config.from_sites(g, [(1, 0)]), Config.empty(g))
    path = track_tagged_discrepancy(cc, VERTICAL_ONLY, 10.0, seed=2)
    assert set(path.columns.tolist()) == {1}
    assert path.sites[0] == (1, 0)
    assert not path.coalesced
    with pytest.raises(ValueError):
        track_tagged_discrepancy(CoupledConfig(Config.empty(g), Config.empty(g)), RATES, 1.0)


def test_tagged_path_terminates_at_coalescence():
    g = LaneGeometry.closed(1)
    cc = CoupledConfig(Config.from_sites(g, [(0, 0)]), Config.from_sites(g, [(0, 1)]))
    path = track_tagged_discrepancy(cc, RATES, 100.0, seed=4, site=(0, 0))
    assert path.coalesced and path.sites[-1] is None
    assert all(s is not None for s in path.sites[:-1])


def test_tagged_speed_is_bounded():
    g = LaneGeometry.closed(40)
    cc = CoupledConfig(Config.from_sites(g, [(0, 0)]), Config.empty(g))
    T = 50.0
    table = bond_table(RATES, g)
    speeds = [track_tagged_discrepancy(cc, RATES, T, seed=replica_seed(8, k), table=table)
              .max_displacement() / T for k in range(300)]
    # a lone discrepancy jumps horizontally at rate at most max(d_i + l_i)
    sigma = max(RATES.d0 + RATES.l0, RATES.d1 + RATES.l1)
    assert max(speeds) <= 1 + sigma
    assert np.mean(speeds) > 0
