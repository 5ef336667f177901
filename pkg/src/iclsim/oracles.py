"""Brute-force reference computations and random instance generators.

These recompute the quantities checked by the core primitives through a
different route (full joint enumeration or direct simulation), for use by
the oracle backend and the test suite.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .al import GainEstimates, choose_favorite, consensus_pairs, favor_score
from .core import SmallGame, participant_profit, social_welfare_lambda, system_profit, SystemObjectiveParams


def random_small_game(rng, max_candidates=4, max_support=3, dyadic=None):
    """A random game whose incentive comparisons are never decided by rounding.

    Continuous instances use the mean gain map, where exact ties have
    probability zero. Dyadic instances use the max map, whose structural ties
    (a dominated newcomer changes nothing) are computed exactly because every
    value, probability and product is a short binary fraction.
    """
    if dyadic is None:
        dyadic = bool(rng.random() < 0.5)
    n = int(rng.integers(1, max_candidates + 1))
    outcomes, weights, ca, ci = {}, {}, {}, {}
    for m in range(n):
        k = int(rng.integers(1, max_support + 1))
        if dyadic:
            vals = tuple(float(v) / 4 for v in rng.integers(-8, 9, size=k))
            probs = (1.0,) if k == 1 else ((0.5, 0.5) if k == 2 else (0.5, 0.25, 0.25))
        else:
            vals = tuple(float(v) for v in rng.normal(0, 1, size=k))
            probs = tuple(float(p) for p in rng.dirichlet(np.ones(k)))
        outcomes[m] = (vals, probs)
        weights[m] = 1.0 if dyadic else float(rng.uniform(0.5, 2.0))
        if dyadic:
            ca[m] = float(rng.integers(-4, 5)) / 8
            ci[m] = float(rng.integers(-4, 5)) / 8
        else:
            ca[m] = float(rng.normal(0, 0.5))
            ci[m] = float(rng.normal(0, 0.2))
    rho = 0.5 if dyadic else float(rng.choice([0.5, 0.7, 1.0]))
    lam = float(rng.choice([0.0, 0.5, 1.0, 2.0]))  # dyadic, so lam * cost stays exact
    gain_map = "max" if dyadic else "mean"
    return SmallGame(outcomes, weights, ca, ci, rho=rho, lam=lam, gain_map=gain_map,
                     empty_gain=float(rng.normal(0, 0.5)) if not dyadic else -1.0)


def random_profile(rng, game):
    return frozenset(m for m in game.candidates if rng.random() < 0.5)


def _worlds(game):
    """Every joint (activity coin, outcome) assignment with its probability."""
    cands = game.candidates
    per = []
    for m in cands:
        vals, probs = game.outcomes[m]
        opts = []
        for coin, pc in ((1, game.rho), (0, 1 - game.rho)):
            if pc == 0:
                continue
            for v, pv in zip(vals, probs):
                opts.append((coin, v, pc * pv))
        per.append(opts)
    for combo in itertools.product(*per):
        p = 1.0
        for _, _, q in combo:
            p *= q
        yield p, {m: c for m, (c, _, _) in zip(cands, combo)}, {m: v for m, (_, v, _) in zip(cands, combo)}


def _expected_profits(game, profile):
    """Expected per-candidate profit and system profit when ``profile`` participates."""
    params = SystemObjectiveParams(game.lam)
    U = game.utility
    prof = {m: [] for m in profile}
    sysp = []
    for p, coins, draws in _worlds(game):
        active = sorted(m for m in profile if coins[m])
        z = game.collab_gain(active, draws)
        costs = {m: game.cost_active[m] if coins[m] else game.cost_idle[m] for m in profile}
        for m in profile:
            prof[m].append(p * participant_profit(True, costs[m], U(z), U(draws[m])))
        sysp.append(p * system_profit(params, [costs[m] for m in sorted(profile)], U(z)))
    return {m: math.fsum(v) for m, v in prof.items()}, math.fsum(sysp)


def best_response_equilibrium(game: SmallGame, profile):
    """Equilibrium flag from unilateral flips, by full joint enumeration."""
    profile = frozenset(profile)
    for m in game.candidates:
        with_m = profile | {m}
        without_m = profile - {m}
        prof_with, sys_with = _expected_profits(game, with_m)
        _, sys_without = _expected_profits(game, without_m)
        joins = prof_with[m] >= 0 and sys_with - sys_without >= 0
        if joins != (m in profile):
            return False
    return True


def prop1_round(rng):
    """A random round; returns (objective at lambda', welfare form) for comparison."""
    n = int(rng.integers(0, 8))
    lam = float(rng.uniform(0, 5))
    costs = rng.normal(0, 3, size=n)
    inc_collab = float(rng.normal(0, 5))
    inc_local = rng.normal(0, 5, size=n)
    lam_p = social_welfare_lambda(lam, n)
    objective = lam_p * math.fsum(costs) + inc_collab
    sp = system_profit(SystemObjectiveParams(lam), list(costs), inc_collab)
    profits = [participant_profit(True, c, inc_collab, l) for c, l in zip(costs, inc_local)]
    welfare = (sp + math.fsum(profits)) / (n + 1) + math.fsum(inc_local) / (n + 1)
    return objective, welfare


def random_theorem3_instance(rng):
    u = float(rng.choice([1.0, 2.0]))
    if rng.random() < 0.3:
        # small integers make exact ties common
        costs = [float(c) for c in rng.integers(0, 3, size=3)]
        mu_pair = rng.integers(0, 4, size=(3, 3)).astype(float)
        mu_assist = rng.integers(0, 4, size=(3, 3)).astype(float)
    else:
        costs = list(rng.uniform(0, u, size=3))
        mu_pair = rng.uniform(-1, 2, size=(3, 3))
        mu_assist = rng.uniform(-1, 2, size=(3, 3))
    return u, costs, mu_pair, mu_assist


def consensus_by_simulation(u, costs, mu_pair, mu_assist):
    """Whether any tie-break of favor_score argmaxes yields a mutual pair."""
    est = GainEstimates()
    for i, j in itertools.permutations(range(3), 2):
        est.mu_pair[(i, j)] = float(mu_pair[i][j])
        est.mu_assist[(i, j)] = float(mu_assist[i][j])
    options = []
    for i in range(3):
        scores = {j: favor_score(i, j, u, costs[i], costs[j], est) for j in range(3) if j != i}
        best = max(scores.values())
        options.append([j for j in sorted(scores) if scores[j] == best])
    for combo in itertools.product(*options):
        if consensus_pairs(dict(enumerate(combo))):
            return True
    return False
