"""Assisted-learning exchange, consensus rules and zero-balance pricing."""

import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from iclsim import oracles
from iclsim.al import (
    UNEXPLORED,
    AlConfig,
    AlEntity,
    GainEstimates,
    ZeroBalancePricing,
    choose_favorite,
    consensus_pair,
    consensus_pairs,
    favor_score,
    fit_ridge,
    make_pal_data,
    pricing_consensus_margin,
    run_pal,
    run_pal_round,
    theorem3_check,
    theorem4_threshold,
    zero_balance_costs,
)
from iclsim.errors import ActiveNotParticipant, DegenerateDenominator, MisalignedSubjects
from iclsim.rng import stream


def _pair_setup(b_features, seed=0, n=600):
    """Entity A's label depends on its own feature and on a second one held by B."""
    rng = stream(seed, "al-test")
    xa = rng.standard_normal((n, 1))
    hidden = rng.standard_normal((n, 1))
    y = 2 * xa[:, 0] + 3 * hidden[:, 0] + 0.1 * rng.standard_normal(n)
    xb = hidden if b_features == "predictor" else rng.standard_normal((n, 1))
    cfg = AlConfig(n_subjects=n, n_entities=2, features_per_entity=1)
    perm = rng.permutation(n)
    idx = {"train": perm[:360], "val": perm[360:480], "test": perm[480:]}
    A = AlEntity(0, xa, y, 1.0)
    B = AlEntity(1, xb, xb[:, 0] + 0.1 * rng.standard_normal(n), 1.0)
    preds = {}
    for e in (A, B):
        e.base_model = fit_ridge(e.features[idx["train"]], e.labels[idx["train"]])
        preds[e.id] = e.base_model(e.features)
    return A, B, cfg, idx, preds


def test_noise_partner_brings_nothing():
    A, B, cfg, idx, preds = _pair_setup("noise")
    res = run_pal_round(A, B, cfg, idx, preds, 1)
    va = idx["val"]
    baseline = np.mean((preds[0][va] - A.labels[va]) ** 2)
    assert abs(res[0][3]) < 0.1 * baseline


def test_missing_predictor_partner_helps():
    A, B, cfg, idx, preds = _pair_setup("predictor")
    res = run_pal_round(A, B, cfg, idx, preds, 1)
    assert res[0][3] > 0


def test_self_pairing_rejected():
    A, B, cfg, idx, preds = _pair_setup("noise")
    with pytest.raises(ValueError):
        run_pal_round(A, A, cfg, idx, preds, 1)


def test_misaligned_subjects():
    A, B, cfg, idx, preds = _pair_setup("noise")
    short = AlEntity(1, B.features[:-5], B.labels[:-5])
    with pytest.raises(MisalignedSubjects):
        run_pal_round(A, short, cfg, idx, preds, 1)
    with pytest.raises(MisalignedSubjects):
        AlEntity(2, np.zeros((5, 1)), np.zeros(4))


def _estimates(**pairs):
    est = GainEstimates()
    for key, (mu_ij, mu_j_from_i) in pairs.items():
        i, j = int(key[1]), int(key[2])
        est.update(i, j, 1, mu_ij, 0.0, 0.0, mu_j_from_i)
    return est


def test_favor_score():
    est = _estimates(p12=(5.0, 2.0))
    assert favor_score(1, 2, 1.0, 0.0, 0.0, est) == 5.0
    assert favor_score(1, 3, 1.0, 0.0, 0.0, est) == UNEXPLORED
    assert favor_score(1, 3, 1.0, 0.0, 0.0, est) > 1e300
    assert favor_score(1, 2, 1.0, 1.0, 0.5, est) == 0.5 * 2.0


def test_unexplored_always_chosen():
    rng = stream(2, "fav")
    est = _estimates(p01=(1e9, 1e9))
    for _ in range(20):
        scores = {j: favor_score(0, j, 1.0, 0.5, 0.5, est) for j in (1, 2)}
        assert choose_favorite(0, [1, 2], scores, rng) == 2


def test_consensus_pair():
    assert consensus_pair({1: 2, 2: 1, 3: 1}) == (1, 2)
    assert consensus_pair({1: 2, 2: 3, 3: 1}) is None
    assert consensus_pair({1: 2, 2: 1}) == (1, 2)
    assert consensus_pair({1: 2, 2: 1, 3: 4, 4: 3}) is None
    assert consensus_pairs({1: 2, 2: 1, 3: 4, 4: 3}) == [(1, 2), (3, 4)]


@given(st.dictionaries(st.integers(0, 5), st.integers(0, 5), min_size=2, max_size=6), st.permutations(range(6)))
def test_consensus_relabelling(favors, perm):
    favors = {a: b for a, b in favors.items() if a != b}
    relabel = {a: perm[a] for a in range(6)}
    moved = {relabel[a]: relabel[b] for a, b in favors.items()}
    expected = sorted(tuple(sorted((relabel[a], relabel[b]))) for a, b in consensus_pairs(favors))
    assert consensus_pairs(moved) == expected


def test_tie_break_uniform_regardless_of_order():
    scores = {j: 1.0 for j in range(1, 4)}
    for order in ([1, 2, 3], [3, 1, 2]):
        rng = stream(3, "ties")
        counts = np.bincount([choose_favorite(0, order, scores, rng) for _ in range(6000)], minlength=4)[1:]
        sd = np.sqrt(6000 * (1 / 3) * (2 / 3))
        assert np.all(np.abs(counts - 2000) < 4 * sd)


def test_theorem3_symmetric_and_cyclic():
    sym = np.ones((3, 3))
    assert theorem3_check(1.0, [0.5] * 3, sym, sym)
    # 0 prefers 1, 1 prefers 2, 2 prefers 0
    mu = np.zeros((3, 3))
    mu[0, 1] = mu[1, 2] = mu[2, 0] = 2.0
    mu[0, 2] = mu[1, 0] = mu[2, 1] = 1.0
    zero = np.zeros((3, 3))
    assert not theorem3_check(1.0, [0.0] * 3, mu, zero)
    assert not oracles.consensus_by_simulation(1.0, [0.0] * 3, mu, zero)


def test_theorem3_cross_validation():
    rng = stream(4, "t3")
    for _ in range(200):
        inst = oracles.random_theorem3_instance(rng)
        assert theorem3_check(*inst) == oracles.consensus_by_simulation(*inst)


def test_theorem4_threshold():
    assert theorem4_threshold(1.0, [2.0, 1.0], 2) == pytest.approx(1 / 3, rel=1e-15)
    assert theorem4_threshold(1.0, [2.0, 2.0, 1.0]) == 0.0
    with pytest.raises(DegenerateDenominator):
        theorem4_threshold(1.0, [0.0, 0.0])
    with pytest.raises(ValueError):
        theorem4_threshold(1.0, [1.0, 2.0])


def test_theorem4_boundary():
    rng = stream(5, "t4")
    for _ in range(50):
        K = int(rng.integers(2, 7))
        u = float(rng.uniform(0.5, 3))
        mus = sorted(rng.uniform(0.1, 5, K), reverse=True)
        c = theorem4_threshold(u, mus, K)
        margins = [pricing_consensus_margin(c, u, mus[0], mj, K) for mj in mus[1:]]
        assert min(abs(m) for m in margins) <= 1e-9
        assert all(m >= -1e-9 for m in margins)
        assert min(pricing_consensus_margin(c + 1e-6, u, mus[0], mj, K) for mj in mus[1:]) < 0


def test_zero_balance_costs():
    zb = ZeroBalancePricing(K=3, c=1.0)
    assert zero_balance_costs(2.0, 1, {1, 2, 3}, zb) == {1: -4.0, 2: 2.0, 3: 2.0}
    assert all(v == 0 for v in zero_balance_costs(0.0, 1, {1, 2, 3}, zb).values())
    assert zero_balance_costs(0.75, "a", {"a", "b"}, ZeroBalancePricing(K=2)) == {"a": -0.75, "b": 0.75}
    with pytest.raises(ActiveNotParticipant):
        zero_balance_costs(1.0, 9, {1, 2, 3}, zb)


@given(st.floats(0, 1e6, allow_nan=False), st.integers(2, 12), st.floats(0, 10))
def test_zero_balance_exact(z, K, c):
    costs = zero_balance_costs(z, 0, set(range(K)), ZeroBalancePricing(K=K, c=c))
    assert sum(Fraction(v) for v in costs.values()) == 0
    assert sum(costs.values()) == 0.0


# ----------------------------------------------------------- full runs


def test_single_entity_trains_locally():
    res = run_pal(AlConfig(n_entities=1, T=5), 0)
    assert all(not r.info["pairs"] for r in res.ledger.rounds)
    assert res.test_errors[0][-1] <= res.test_errors[0][0]


@pytest.fixture(scope="module")
def three_way():
    cfg = AlConfig(n_entities=3, T=12)
    return cfg, run_pal(cfg, 1)


def test_every_round_balances_exactly(three_way):
    for r in three_way[1].ledger.rounds:
        assert sum(Fraction(v) for v in r.costs.values()) == 0


def test_protocol_recomputes_predictions(three_way):
    cfg, res = three_way
    blocks, labels, idx = make_pal_data(cfg, 1)
    te = idx["test"]
    for e in res.entities:
        pred = e.predict([b[te] for b in blocks])
        assert np.mean((pred - labels[e.id][te]) ** 2) == pytest.approx(res.test_errors[e.id][-1], rel=1e-10)


def test_pairs_are_recorded_as_active(three_way):
    for r in three_way[1].ledger.rounds:
        paired = {m for p in r.info["pairs"] for m in p}
        assert paired == set(r.active)


def test_all_pay_beats_local_only():
    cfg = AlConfig(n_entities=3)
    res = run_pal(cfg, 2)
    base = run_pal(AlConfig(n_entities=3, collaborate=False), 2)
    for i in range(3):
        assert res.test_errors[i][-1] <= base.test_errors[i][-1]


def test_config_validation():
    for bad in (dict(prices=[1.0]), dict(prices=[1, 1, -1]), dict(blend=0.0), dict(split=(0.5, 0.5, 0.5))):
        with pytest.raises(ValueError):
            AlConfig(**bad)
