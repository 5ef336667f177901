"""Incentivized parallel assisted learning on vertically partitioned data."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .core import GameLedger, SystemObjectiveParams, UtilityIncome
from .errors import ActiveNotParticipant, DegenerateDenominator, MisalignedSubjects
from .rng import stream

UNEXPLORED = math.inf


# ---------------------------------------------------------------- learners


@dataclass
class RidgeModel:
    coef: np.ndarray
    intercept: float
    scale: float = 1.0

    def __call__(self, X):
        return self.scale * (X @ self.coef + self.intercept)


def fit_ridge(X, r, alpha=1e-3):
    xm = X.mean(axis=0)
    rm = r.mean()
    Xc = X - xm
    A = Xc.T @ Xc + alpha * np.eye(X.shape[1])
    coef = np.linalg.solve(A, Xc.T @ (r - rm))
    return RidgeModel(coef, float(rm - xm @ coef))


@dataclass
class StumpBooster:
    """Depth-1 regression trees fitted by least-squares boosting."""

    stumps: list
    base: float
    lr: float
    scale: float = 1.0

    def __call__(self, X):
        out = np.full(X.shape[0], self.base)
        for j, thr, left, right in self.stumps:
            out += self.lr * np.where(X[:, j] <= thr, left, right)
        return self.scale * out


def fit_stumps(X, r, n_rounds=20, lr=0.5, n_thresholds=16):
    base = float(r.mean())
    resid = r - base
    qs = np.linspace(0, 1, n_thresholds + 2)[1:-1]
    stumps = []
    for _ in range(n_rounds):
        best = None
        for j in range(X.shape[1]):
            for thr in np.unique(np.quantile(X[:, j], qs)):
                mask = X[:, j] <= thr
                nl = mask.sum()
                if nl == 0 or nl == len(r):
                    continue
                lv = resid[mask].mean()
                rv = resid[~mask].mean()
                gain = nl * lv * lv + (len(r) - nl) * rv * rv
                if best is None or gain > best[0]:
                    best = (gain, j, float(thr), float(lv), float(rv))
        if best is None:
            break
        _, j, thr, lv, rv = best
        stumps.append((j, thr, lv, rv))
        resid = resid - lr * np.where(X[:, j] <= thr, lv, rv)
    return StumpBooster(stumps, base, lr)


# ------------------------------------------------------------------ types


@dataclass
class ProtocolStep:
    round: int
    own: Callable
    partner: Optional[int] = None
    partner_model: Optional[Callable] = None


@dataclass
class AlEntity:
    """An entity holding one block of features and its own regression task.

    ``features`` and ``labels`` hold every subject; the split indices live
    in the simulation. ``protocol`` records each round's local model and,
    for collaboration rounds, the partner id and the partner's model fitted
    to this entity's residual.
    """

    id: int
    features: np.ndarray
    labels: np.ndarray
    price: float = 0.0
    learner: str = "ridge"
    residuals: Optional[np.ndarray] = None
    base_model: Optional[Callable] = None
    protocol: List[ProtocolStep] = field(default_factory=list)

    def __post_init__(self):
        if self.price < 0:
            raise ValueError("price coefficient must be >= 0")
        if self.learner not in ("ridge", "stumps"):
            raise ValueError("learner must be 'ridge' or 'stumps'")
        if self.features.shape[0] != self.labels.shape[0]:
            raise MisalignedSubjects("features and labels disagree on subject count")

    def predict(self, blocks):
        """Prediction for subjects whose feature blocks are ``blocks[id]``."""
        out = self.base_model(blocks[self.id])
        for step in self.protocol:
            out = out + step.own(blocks[self.id])
            if step.partner is not None:
                out = out + step.partner_model(blocks[step.partner])
        return out


@dataclass
class GainEstimates:
    """Latest collaboration gains.

    ``mu_pair[(i, j)]`` is i's gain from the last round it worked with j;
    ``mu_assist[(j, i)]`` is the extra gain i brought to j in that round.
    """

    mu_pair: Dict[Tuple[int, int], float] = field(default_factory=dict)
    mu_assist: Dict[Tuple[int, int], float] = field(default_factory=dict)
    last_collab_round: Dict[Tuple[int, int], int] = field(default_factory=dict)

    def update(self, a, b, t, mu_ab, mu_a_from_b, mu_ba, mu_b_from_a):
        self.mu_pair[(a, b)] = mu_ab
        self.mu_pair[(b, a)] = mu_ba
        self.mu_assist[(a, b)] = mu_a_from_b
        self.mu_assist[(b, a)] = mu_b_from_a
        self.last_collab_round[(a, b)] = t
        self.last_collab_round[(b, a)] = t

    def explored(self, i, j):
        return (i, j) in self.mu_pair


@dataclass(frozen=True)
class ZeroBalancePricing:
    """Non-active participants each pay C(z) to the single active one.

    C defaults to c*z. Costs are rounded to multiples of ``tick`` (a power
    of two), coarsened for large values so that C(z) keeps few enough
    significant bits for every partial sum of the K-1 payments and the one
    receipt to be exact in binary floating point.
    """

    K: int
    c: float = 1.0
    cost_fn: Optional[Callable] = None
    tick: float = 2.0 ** -30

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("zero-balance pricing needs K >= 2")
        if self.c < 0:
            raise ValueError("c must be >= 0")

    def C(self, z):
        raw = self.cost_fn(z) if self.cost_fn is not None else self.c * z
        if raw < 0:
            raise ValueError("C(z) must be nonnegative")
        if raw == 0:
            return 0.0
        _, e = math.frexp(raw)
        tick = max(self.tick, math.ldexp(1.0, e - 53 + (self.K - 1).bit_length()))
        return round(raw / tick) * tick


def zero_balance_costs(z, active, participants, pricing: ZeroBalancePricing):
    participants = sorted(participants)
    if active not in participants:
        raise ActiveNotParticipant(f"{active!r} is not a participant")
    if len(participants) != pricing.K:
        raise ValueError(f"expected {pricing.K} participants, got {len(participants)}")
    cz = pricing.C(z)
    return {m: (-(pricing.K - 1) * cz if m == active else cz) for m in participants}


# ------------------------------------------------------------- consensus


def favor_score(i, j, u, c_i, c_j, estimates: GainEstimates):
    if not estimates.explored(i, j):
        return UNEXPLORED
    return (u - c_i) * estimates.mu_pair[(i, j)] + c_j * estimates.mu_assist[(j, i)]


def choose_favorite(i, candidates, scores, rng):
    """argmax of ``scores`` over candidates, ties broken uniformly."""
    if not candidates:
        return None
    best = max(scores[j] for j in candidates)
    tied = [j for j in sorted(candidates) if scores[j] == best]
    return tied[int(rng.integers(len(tied)))] if len(tied) > 1 else tied[0]


def consensus_pairs(favors):
    """All mutual pairs (a, b) with a < b; they are disjoint by construction."""
    out = []
    for a, b in favors.items():
        if b is not None and a != b and favors.get(b) == a and a < b:
            out.append((a, b))
    return sorted(out)


def consensus_pair(favors):
    pairs = consensus_pairs(favors)
    return pairs[0] if len(pairs) == 1 else None


def theorem3_check(u, costs, mu_pair, mu_assist):
    """Whether some pair of the three entities favors each other.

    ``mu_pair[i][j]`` is i's expected collaboration income with j and
    ``mu_assist[j][i]`` the additional gain i brings to j.
    """
    c = costs

    def score(i, j):
        return (u - c[i]) * mu_pair[i][j] + c[j] * mu_assist[j][i]

    for a, b in itertools.permutations(range(3), 2):
        k = 3 - a - b
        if score(a, b) >= score(a, k) and score(b, a) >= score(b, k):
            return True
    return False


def theorem4_threshold(u, mus, K=None):
    mus = [float(m) for m in mus]
    K = len(mus) if K is None else K
    mu1 = mus[0]
    if any(m > mu1 for m in mus[1:]):
        raise ValueError("mus[0] must be the largest mean")
    best = math.inf
    for mj in mus[1:]:
        den = mu1 + (K - 1) * mj
        if den == 0:
            raise DegenerateDenominator("mu_1 + (K-1) mu_j is zero")
        best = min(best, u * (mu1 - mj) / den)
    return best


def pricing_consensus_margin(c, u, mu1, muj, K):
    """Slack of the linear-price consensus condition for one competitor j."""
    return u * (mu1 - muj) - c * (mu1 + (K - 1) * muj)


# ------------------------------------------------------------- simulation


@dataclass
class AlConfig:
    n_subjects: int = 500
    n_entities: int = 3
    features_per_entity: int = 4
    cross_scale: float = 1.0
    noise: float = 0.5
    prices: Optional[list] = None  # per-entity c_i, default all equal to u
    u: float = 1.0
    T: int = 15
    learner: str = "ridge"
    ridge_alpha: float = 1e-3
    stump_rounds: int = 20
    blend: float = 0.5
    patience: int = 3
    split: tuple = (0.6, 0.2, 0.2)
    collaborate: bool = True

    def __post_init__(self):
        if self.n_entities < 1 or self.features_per_entity < 1:
            raise ValueError("need at least one entity and one feature each")
        if self.n_subjects < 10:
            raise ValueError("n_subjects must be >= 10")
        if self.prices is not None:
            if len(self.prices) != self.n_entities:
                raise ValueError("prices must list one coefficient per entity")
            if any(p < 0 for p in self.prices):
                raise ValueError("prices must be >= 0")
        if self.u < 0 or self.T < 1 or self.patience < 1:
            raise ValueError("u must be >= 0, T and patience >= 1")
        if not 0 < self.blend <= 1:
            raise ValueError("blend must lie in (0, 1]")
        if len(self.split) != 3 or abs(sum(self.split) - 1) > 1e-9 or min(self.split) <= 0:
            raise ValueError("split must be three positive fractions summing to 1")
        if self.learner not in ("ridge", "stumps"):
            raise ValueError("learner must be 'ridge' or 'stumps'")

    def price_of(self, i):
        return self.u if self.prices is None else float(self.prices[i])


def make_pal_data(config: AlConfig, seed):
    """Shared Gaussian design split into blocks; each label loads on all blocks."""
    rng = stream(seed, "pal", "data")
    K, p, n = config.n_entities, config.features_per_entity, config.n_subjects
    X = rng.standard_normal((n, K * p))
    blocks = [X[:, i * p:(i + 1) * p] for i in range(K)]
    labels = []
    for i in range(K):
        beta = rng.standard_normal(K * p) * config.cross_scale
        beta[i * p:(i + 1) * p] = rng.standard_normal(p)
        labels.append(X @ beta + config.noise * rng.standard_normal(n))
    perm = stream(seed, "pal", "split").permutation(n)
    n_tr = int(round(config.split[0] * n))
    n_va = int(round(config.split[1] * n))
    idx = {"train": perm[:n_tr], "val": perm[n_tr:n_tr + n_va], "test": perm[n_tr + n_va:]}
    return blocks, labels, idx


@dataclass
class PalResult:
    ledger: GameLedger
    test_errors: Dict[int, List[float]]
    entities: List[AlEntity]
    estimates: GainEstimates


def _fit(config, X, r):
    if config.learner == "stumps":
        return fit_stumps(X, r, n_rounds=config.stump_rounds)
    return fit_ridge(X, r, config.ridge_alpha)


def _mse(pred, y):
    d = pred - y
    return float(d @ d) / len(y)


def run_pal_round(A: AlEntity, B: AlEntity, config: AlConfig, idx, preds, t):
    """One PAL exchange between A and B.

    ``preds[i]`` holds entity i's current predictions on every subject.
    Returns the two protocol steps and the four gains, as validation-loss
    reductions scaled by u.
    """
    if A.id == B.id:
        raise ValueError("an entity cannot pair with itself")
    if A.features.shape[0] != B.features.shape[0]:
        raise MisalignedSubjects("entities disagree on subject count")
    tr, va = idx["train"], idx["val"]
    out = {}
    for me, other in ((A, B), (B, A)):
        r = me.labels - preds[me.id]
        own = _fit(config, me.features[tr], r[tr])
        rest = r - own(me.features)
        helper = _fit(config, other.features[tr], rest[tr])
        helper.scale = config.blend
        before = _mse(preds[me.id][va], me.labels[va])
        local = preds[me.id] + own(me.features)
        joint = local + helper(other.features)
        after = _mse(joint[va], me.labels[va])
        alone = _mse(local[va], me.labels[va])
        out[me.id] = (ProtocolStep(t, own, other.id, helper), joint,
                      config.u * (before - after), config.u * (alone - after), config.u * (before - alone))
    return out


def run_pal(config: AlConfig, seed) -> PalResult:
    """Multi-round incentivized PAL, or local-only training if ``collaborate`` is off."""
    blocks, labels, idx = make_pal_data(config, seed)
    K = config.n_entities
    tr, va, te = idx["train"], idx["val"], idx["test"]
    ents = []
    preds = {}
    for i in range(K):
        e = AlEntity(i, blocks[i], labels[i], config.price_of(i), config.learner)
        e.base_model = _fit(config, e.features[tr], e.labels[tr])
        preds[i] = e.base_model(e.features)
        e.residuals = e.labels - preds[i]
        ents.append(e)
    tie_rng = stream(seed, "pal", "ties")
    est = GainEstimates()
    test_err = {i: [_mse(preds[i][te], labels[i][te])] for i in range(K)}
    best_val = {i: _mse(preds[i][va], labels[i][va]) for i in range(K)}
    stale = {i: 0 for i in range(K)}
    training = set(range(K))
    quit_collab = set()
    ledger = GameLedger(frozenset(range(K)), UtilityIncome("linear", config.u), SystemObjectiveParams(0.0))

    for t in range(1, config.T + 1):
        if not training:
            break
        # favors, in fixed id order
        open_ids = sorted(i for i in training if i not in quit_collab) if config.collaborate else []
        favors = {}
        for i in open_ids:
            cands = [j for j in open_ids if j != i]
            if cands and all(est.explored(i, j) for j in cands) and all(est.mu_pair[(i, j)] <= 0 for j in cands):
                quit_collab.add(i)
                favors[i] = None
                continue
            scores = {j: favor_score(i, j, config.u, ents[i].price, ents[j].price, est) for j in cands}
            favors[i] = choose_favorite(i, cands, scores, tie_rng)
        favors = {i: (j if j not in quit_collab else None) for i, j in favors.items() if i not in quit_collab}
        pairs = consensus_pairs(favors)

        paired = set()
        costs = {}
        gains = {}
        collab_gain = 0.0
        for a, b in pairs:
            res = run_pal_round(ents[a], ents[b], config, idx, preds, t)
            (step_a, joint_a, mu_ab, mu_a_from_b, loc_a) = res[a]
            (step_b, joint_b, mu_ba, mu_b_from_a, loc_b) = res[b]
            est.update(a, b, t, mu_ab, mu_a_from_b, mu_ba, mu_b_from_a)
            ents[a].protocol.append(step_a)
            ents[b].protocol.append(step_b)
            preds[a], preds[b] = joint_a, joint_b
            # each side pays for the gain it received and is paid for the gain it gave
            transfer = ents[a].price * mu_a_from_b - ents[b].price * mu_b_from_a
            costs[a], costs[b] = transfer, -transfer
            gains[a], gains[b] = loc_a, loc_b
            collab_gain += mu_ab + mu_ba
            paired |= {a, b}
        for i in sorted(training - paired):
            e = ents[i]
            r = e.labels - preds[i]
            h = _fit(config, e.features[tr], r[tr])
            before = _mse(preds[i][va], e.labels[va])
            preds[i] = preds[i] + h(e.features)
            e.protocol.append(ProtocolStep(t, h))
            costs[i] = 0.0
            gains[i] = config.u * (before - _mse(preds[i][va], e.labels[va]))
        for i in range(K):
            ents[i].residuals = ents[i].labels - preds[i]
            test_err[i].append(_mse(preds[i][te], labels[i][te]))

        participants = set(training)
        ledger.record_round(participants, paired, {m: gains[m] / config.u if config.u else 0.0 for m in participants},
                            collab_gain / config.u if config.u else 0.0,
                            {m: costs[m] for m in participants},
                            info={"round": t, "pairs": pairs,
                                  "test_error": {i: test_err[i][-1] for i in range(K)}})
        # stop rule: leave the training stage after `patience` rounds without improvement
        for i in sorted(training):
            v = _mse(preds[i][va], labels[i][va])
            if v < best_val[i]:
                best_val[i] = v
                stale[i] = 0
            else:
                stale[i] += 1
        training -= {i for i in training if stale[i] >= config.patience}
    return PalResult(ledger, test_err, ents, est)
