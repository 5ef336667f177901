"""Collaborative multi-armed bandit with piecewise participation pricing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .core import GameLedger, SystemObjectiveParams, UtilityIncome
from .rng import stream


@dataclass(frozen=True)
class MabPricing:
    b0: float = 1.0
    b1: float = 5.0
    b2: float = 10.0
    kappa1: float = 2.0
    kappa2: float = 4.0

    def __post_init__(self):
        if min(self.b0, self.b1, self.b2) < 0:
            raise ValueError("b0, b1, b2 must be >= 0")
        if self.kappa1 > self.kappa2:
            raise ValueError("kappa1 must not exceed kappa2")


@dataclass
class MabConfig:
    M: int = 50
    T: int = 150
    epsilon: float = 0.1
    pricing: MabPricing = field(default_factory=MabPricing)
    mu_mean: float = 3.0
    mu_sd: float = 1.0
    s_noise: float = 1.0
    eps_schedule: str = "constant"  # or "decay": eps_t = eps * t**(-1/3)
    idle_pays_baseline: bool = True
    u: float = 1.0

    def __post_init__(self):
        if self.M < 1 or self.T < 1:
            raise ValueError("M and T must be >= 1")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.s_noise <= 0 or self.mu_sd < 0:
            raise ValueError("s_noise must be > 0 and mu_sd >= 0")
        if self.eps_schedule not in ("constant", "decay"):
            raise ValueError("eps_schedule must be 'constant' or 'decay'")

    def eps_at(self, t):
        if self.eps_schedule == "decay":
            return self.epsilon * t ** (-1.0 / 3.0)
        return self.epsilon


@dataclass
class Arm:
    id: int
    mu: float
    s_noise: float = 1.0
    mu_hat: float = math.nan
    pulls: int = 0

    def observe(self, z):
        self.pulls += 1
        if self.pulls == 1:
            self.mu_hat = z
        else:
            self.mu_hat += (z - self.mu_hat) / self.pulls


def mab_cost(z, pricing: MabPricing):
    c = pricing.b0
    if z < pricing.kappa1:
        c += pricing.b1
    if z > pricing.kappa2:
        c -= pricing.b2
    return c


def expected_arm_cost(mu, pricing: MabPricing, s_noise):
    """Expected mab_cost of an arm with mean ``mu`` and Gaussian reward noise."""
    return (pricing.b0 + pricing.b1 * ndtr((pricing.kappa1 - mu) / s_noise)
            - pricing.b2 * ndtr((mu - pricing.kappa2) / s_noise))


def participation_condition(mu_m, empirical_means, epsilon, pricing, s_noise):
    mh = np.asarray(empirical_means, float)
    benefit = (1 - epsilon) * mh.max() + epsilon * mh.mean() - mu_m
    return expected_arm_cost(mu_m, pricing, s_noise) <= benefit


def profit_performance(mu, mu1, pricing, s_noise):
    return mu1 - mu - expected_arm_cost(mu, pricing, s_noise)


def _select(participants, mu_hat, epsilon, draws, n_arms):
    # draws: (explore, arm, fallback, tie) uniforms in [0, 1)
    if not participants:
        return None
    parts = sorted(participants)
    if len(parts) == 1:
        return parts[0]
    u_explore, u_arm, u_fallback, u_tie = draws
    if u_explore < epsilon:
        # an id drawn from the whole arm population, redrawn among participants
        # when it misses them: still uniform over participants, and two runs
        # with different participant sets share as many picks as possible
        j = int(u_arm * n_arms)
        if j in participants:
            return j
        return parts[int(u_fallback * len(parts))]
    vals = np.array([mu_hat[m] for m in parts])
    best = np.flatnonzero(vals == vals.max())
    return parts[best[int(u_tie * len(best))]]


def select_arm(participants, empirical_means, epsilon, rng, n_arms=None):
    """epsilon-greedy choice among participants; None when there are none.

    ``n_arms`` is the size of the arm population used for the exploration
    draw (defaults to ``len(empirical_means)``).
    """
    if n_arms is None:
        n_arms = len(empirical_means)
    return _select(set(participants), empirical_means, epsilon, rng.random(4), n_arms)


def run_mab(config: MabConfig, seed, incentivized=True) -> GameLedger:
    """Simulate the bandit game for ``config.T`` rounds.

    Reward noise and selection uniforms come from streams keyed only by the
    seed, so an incentivized run and a baseline run with the same seed face
    the same reward for the same arm in the same round.
    """
    M, T = config.M, config.T
    pr = config.pricing
    mus = stream(seed, "mab", "means").normal(config.mu_mean, config.mu_sd, size=M)
    # burn-in pulls every arm at once, so it needs one draw per arm; later
    # rounds pull a single arm, so one draw per round is enough and paired
    # runs see the same noise whichever arm they pull
    burn = stream(seed, "mab", "burn_in").standard_normal(M) * config.s_noise
    noise = stream(seed, "mab", "noise").standard_normal(T + 1) * config.s_noise
    sel_draws = stream(seed, "mab", "select").random((T, 4))
    arms = [Arm(i, float(mus[i]), config.s_noise) for i in range(M)]

    # burn-in: one pull per arm so every empirical mean is defined
    for a in arms:
        a.observe(a.mu + burn[a.id])

    ledger = GameLedger(frozenset(range(M)), UtilityIncome("linear", config.u), SystemObjectiveParams(0.0))
    exp_cost = expected_arm_cost(mus, pr, config.s_noise)
    cum_reward = 0.0
    cum_balance = 0.0
    for t in range(1, T + 1):
        eps = config.eps_at(t)
        mu_hat = np.array([a.mu_hat for a in arms])
        if incentivized:
            benefit = (1 - eps) * mu_hat.max() + eps * mu_hat.mean() - mus
            parts = {i for i in range(M) if exp_cost[i] <= benefit[i]}
        else:
            parts = set(range(M))
        j = _select(parts, mu_hat, eps, sel_draws[t - 1], M)
        costs = {}
        gains = {m: arms[m].mu for m in parts}
        if j is None:
            z = 0.0
            active = set()
        else:
            z = arms[j].mu + noise[t]
            arms[j].observe(z)
            active = {j}
            gains[j] = z
            for m in parts:
                if not incentivized:
                    costs[m] = 0.0
                elif m == j:
                    costs[m] = mab_cost(z, pr)
                else:
                    costs[m] = pr.b0 if config.idle_pays_baseline else 0.0
            cum_reward += z
            cum_balance += math.fsum(costs[m] for m in sorted(costs))
        if j is None:
            costs = {m: 0.0 for m in parts}
        ledger.record_round(parts, active, gains, z, costs, info={
            "round": t,
            "n_participants": len(parts),
            "active_arm": -1 if j is None else j,
            "reward": z,
            "cum_reward": cum_reward,
            "cum_balance": cum_balance,
        })
    return ledger
