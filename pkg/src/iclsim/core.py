"""Game primitives shared by every backend: profits, incentives, selection."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Hashable, Iterable, List, Optional

import numpy as np

from . import kernels
from .errors import InstanceTooLarge, InvalidSelectionVector
from .rng import as_generator

SELECTION_TOL = 1e-9


@dataclass(frozen=True)
class UtilityIncome:
    """Monotone map from a gain to monetary income.

    ``kind="linear"`` maps z to u*z. ``kind="tabulated"`` interpolates the
    nondecreasing table (xs, ys) and holds the end values flat outside it.
    """

    kind: str = "linear"
    u: float = 1.0
    xs: Optional[tuple] = None
    ys: Optional[tuple] = None

    def __post_init__(self):
        if self.kind == "linear":
            if not (math.isfinite(self.u) and self.u >= 0):
                raise ValueError("linear utility needs a finite u >= 0")
        elif self.kind == "tabulated":
            if self.xs is None or self.ys is None or len(self.xs) != len(self.ys) or len(self.xs) < 2:
                raise ValueError("tabulated utility needs xs and ys of equal length >= 2")
            xs = np.asarray(self.xs, float)
            ys = np.asarray(self.ys, float)
            if np.any(np.diff(xs) <= 0):
                raise ValueError("tabulated xs must be strictly increasing")
            if np.any(np.diff(ys) < 0):
                raise ValueError("tabulated ys must be nondecreasing")
            object.__setattr__(self, "xs", tuple(float(v) for v in xs))
            object.__setattr__(self, "ys", tuple(float(v) for v in ys))
        else:
            raise ValueError(f"unknown utility kind {self.kind!r}")

    @property
    def is_linear(self):
        return self.kind == "linear"

    def __call__(self, z):
        if self.kind == "linear":
            return self.u * z
        out = np.interp(z, self.xs, self.ys)
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, z):
        if self.kind == "linear":
            return self.u
        xs = np.asarray(self.xs)
        ys = np.asarray(self.ys)
        k = np.clip(np.searchsorted(xs, z, side="right") - 1, 0, len(xs) - 2)
        inside = (z >= xs[0]) & (z < xs[-1])
        slope = (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])
        return np.where(inside, slope, 0.0)


@dataclass
class ProfitRecord:
    entity: Hashable
    cost: float
    collab_income: float
    local_income: float
    profit: float


@dataclass(frozen=True)
class SystemObjectiveParams:
    """Weight on participation income. ``infinite`` selects the cost-sum limit."""

    lam: float = 0.0
    infinite: bool = False

    def __post_init__(self):
        if not math.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lambda must be finite and >= 0")


def participant_profit(is_participant, cost, collab_income, local_income):
    if not is_participant:
        return 0.0
    return -cost + collab_income - local_income


def system_profit(params: SystemObjectiveParams, costs, collab_income):
    total = math.fsum(costs)
    if params.infinite:
        return total
    return params.lam * total + collab_income


def social_welfare_lambda(lam, participant_count):
    if participant_count < 0:
        raise ValueError("participant_count must be >= 0")
    return (lam - 1.0) / (participant_count + 1)


def incent_parti(expected_cost, expected_collab_income, expected_local_income):
    return -expected_cost + expected_collab_income - expected_local_income >= 0


def incent_sys(lam, expected_cost, income_with, income_without):
    return lam * expected_cost + income_with - income_without >= 0


# ---------------------------------------------------------------- ledger


@dataclass
class RoundRecord:
    participants: frozenset
    active: frozenset
    realized_gains: Dict[Hashable, float]
    collab_gain: float
    costs: Dict[Hashable, float]
    system_profit: float
    participant_profits: Dict[Hashable, float]
    info: dict = field(default_factory=dict)


@dataclass
class GameLedger:
    """Per-round record of one game.

    ``record_round`` derives the system and participant profits from the
    supplied costs and gains, so every stored round is internally consistent.
    """

    candidates: frozenset
    utility: UtilityIncome = field(default_factory=UtilityIncome)
    params: SystemObjectiveParams = field(default_factory=SystemObjectiveParams)
    rounds: List[RoundRecord] = field(default_factory=list)

    def record_round(self, participants, active, realized_gains, collab_gain, costs, info=None):
        participants = frozenset(participants)
        active = frozenset(active)
        if not active <= participants:
            raise ValueError("active set must be a subset of participants")
        if not participants <= self.candidates:
            raise ValueError("participants must be candidates")
        if set(costs) != set(participants):
            raise ValueError("costs must be keyed exactly by participants")
        U = self.utility
        collab_income = U(collab_gain)
        profits = {
            m: participant_profit(True, costs[m], collab_income, U(realized_gains[m]))
            for m in sorted(participants, key=_sort_key)
        }
        sp = system_profit(self.params, [costs[m] for m in sorted(participants, key=_sort_key)], collab_income)
        rec = RoundRecord(participants, active, dict(realized_gains), collab_gain, dict(costs), sp, profits, info or {})
        self.rounds.append(rec)
        return rec

    def profit_identity_residuals(self):
        """|lhs - rhs| of the summed-profit identity for every round."""
        lam = self.params.lam
        U = self.utility
        out = []
        for r in self.rounds:
            P = sorted(r.participants, key=_sort_key)
            lhs = r.system_profit + math.fsum(r.participant_profits[m] for m in P)
            rhs = ((lam - 1.0) * math.fsum(r.costs[m] for m in P)
                   + (len(P) + 1) * U(r.collab_gain)
                   - math.fsum(U(r.realized_gains[m]) for m in P))
            out.append(abs(lhs - rhs))
        return out


def _sort_key(x):
    return (type(x).__name__, x)


# ------------------------------------------------------------- selection


@dataclass
class SelectionVector:
    q: Dict[Hashable, float]
    rho: float

    def __post_init__(self):
        if not (0 < self.rho <= 1):
            raise InvalidSelectionVector(f"rho={self.rho} outside (0, 1]")
        for m, v in self.q.items():
            if not (0.0 <= v <= 1.0):
                raise InvalidSelectionVector(f"q[{m!r}]={v} outside [0, 1]")
        total = math.fsum(self.q.values())
        target = self.rho * len(self.q)
        if abs(total - target) > SELECTION_TOL:
            raise InvalidSelectionVector(f"sum(q)={total} differs from rho*|P|={target}")

    @classmethod
    def uniform(cls, participants, rho):
        return cls({m: rho for m in participants}, rho)


def sample_active(sel: SelectionVector, participants, seed) -> frozenset:
    """Independent Bernoulli(q_m) draw over the participants."""
    participants = sorted(participants, key=_sort_key)
    if set(participants) != set(sel.q):
        raise InvalidSelectionVector("selection vector must be keyed exactly by participants")
    rng = as_generator(seed, "sample_active")
    draws = rng.random(len(participants))
    return frozenset(m for m, u in zip(participants, draws) if u < sel.q[m])


@dataclass(frozen=True)
class GainModel:
    """Finitely supported outcome distribution of one participant."""

    values: tuple
    probs: tuple
    weight: float = 1.0

    def __post_init__(self):
        if len(self.values) != len(self.probs) or not self.values:
            raise ValueError("values and probs must be nonempty and aligned")
        if any(p < 0 for p in self.probs) or abs(math.fsum(self.probs) - 1.0) > 1e-9:
            raise ValueError("probs must be a distribution")
        if not self.weight > 0:
            raise ValueError("weight must be positive")

    @classmethod
    def point(cls, value, weight=1.0):
        return cls((float(value),), (1.0,), weight)


def _pack_models(models):
    weights = np.array([m.weight for m in models], float)
    offsets = np.zeros(len(models) + 1, np.int64)
    offsets[1:] = np.cumsum([len(m.values) for m in models])
    values = np.concatenate([np.asarray(m.values, float) for m in models])
    probs = np.concatenate([np.asarray(m.probs, float) for m in models])
    return weights, values, probs, offsets


def enumeration_cost(models):
    return math.prod(1 + len(m.values) for m in models)


def expected_selection_gain(q, models, target, utility=None, budget=2_000_000):
    """E[U(z_A) | A nonempty] for z_A = -(weighted mean outcome - target)^2."""
    utility = utility or UtilityIncome()
    if enumeration_cost(models) > budget:
        raise InstanceTooLarge(f"enumeration needs {enumeration_cost(models)} terms, budget {budget}")
    q = np.asarray(q, float)
    weights, values, probs, offsets = _pack_models(models)
    if utility.is_linear:
        num, p_any = kernels.expected_quadratic_gain(q, weights, values, probs, offsets, float(target))
        if p_any <= 0:
            return -math.inf
        return utility.u * num / p_any
    num, p_any = kernels.py_expected_gain_generic(q, weights, values, probs, offsets, float(target), utility)
    return num / p_any if p_any > 0 else -math.inf


@dataclass
class SelectionResult:
    selection: SelectionVector
    value: float
    exhaustive: bool
    evaluations: int


def _compositions(total, parts, cap):
    """All tuples of ``parts`` ints in [0, cap] summing to ``total``."""
    if parts == 1:
        if 0 <= total <= cap:
            yield (total,)
        return
    for first in range(max(0, total - cap * (parts - 1)), min(cap, total) + 1):
        for rest in _compositions(total - first, parts - 1, cap):
            yield (first,) + rest


def _count_compositions(total, parts, cap):
    # inclusion-exclusion over parts exceeding cap
    n = 0
    for k in range(parts + 1):
        rem = total - k * (cap + 1)
        if rem < 0:
            break
        n += (-1) ** k * math.comb(parts, k) * math.comb(rem + parts - 1, parts - 1)
    return n


def optimize_selection(rho, models: Dict[Hashable, GainModel], target=0.0, utility=None,
                       budget=2_000_000, step=0.05, max_grid_points=20_000, restarts=4, seed=0):
    """Maximize E[U(z_A)] over selection vectors on a grid of the given step.

    Small lattices are enumerated exhaustively. Larger ones use a pairwise
    mass-exchange hill climb started from the uniform vector and from a few
    random lattice points.
    """
    ids = sorted(models, key=_sort_key)
    mods = [models[m] for m in ids]
    n = len(ids)
    if n == 0:
        raise ValueError("need at least one participant")
    if n > 12:
        raise InstanceTooLarge("optimize_selection supports at most 12 participants")
    if enumeration_cost(mods) > budget:
        raise InstanceTooLarge(f"enumeration needs {enumeration_cost(mods)} terms, budget {budget}")
    cap = int(round(1.0 / step))
    if abs(cap * step - 1.0) > 1e-12:
        raise ValueError("step must divide 1")
    units_f = rho * n / step
    units = int(round(units_f))
    if abs(units - units_f) > 1e-6:
        raise ValueError(f"rho*|P| = {rho * n} is not a multiple of step {step}")

    cache = {}

    def value(point):
        if point not in cache:
            q = np.array(point, float) * step
            cache[point] = expected_selection_gain(q, mods, target, utility, budget)
        return cache[point]

    n_points = _count_compositions(units, n, cap)
    exhaustive = n_points <= max_grid_points
    best = None
    if exhaustive:
        for point in _compositions(units, n, cap):
            v = value(point)
            if best is None or v > best[1]:
                best = (point, v)
    else:
        rng = as_generator(seed, "optimize_selection")
        starts = [_spread(units, n, cap)]
        for _ in range(restarts):
            starts.append(_random_point(units, n, cap, rng))
        for start in starts:
            point, v = _hill_climb(start, value, cap)
            if best is None or v > best[1]:
                best = (point, v)
    q = {m: min(1.0, k * step) for m, k in zip(ids, best[0])}
    _fix_sum(q, rho)
    return SelectionResult(SelectionVector(q, rho), best[1], exhaustive, len(cache))


def _fix_sum(q, rho):
    # grid products like 7*0.05 carry rounding error; push it onto one entry
    keys = list(q)
    diff = rho * len(keys) - math.fsum(q.values())
    for k in keys:
        if 0.0 <= q[k] + diff <= 1.0:
            q[k] += diff
            return


def _spread(units, n, cap):
    base, extra = divmod(units, n)
    return tuple(min(cap, base + (1 if i < extra else 0)) for i in range(n))


def _random_point(units, n, cap, rng):
    point = [0] * n
    left = units
    while left:
        i = int(rng.integers(n))
        if point[i] < cap:
            point[i] += 1
            left -= 1
    return tuple(point)


def _hill_climb(point, value, cap):
    cur = point
    cur_v = value(cur)
    n = len(point)
    while True:
        best_move = None
        for i, j in itertools.permutations(range(n), 2):
            if cur[i] == 0 or cur[j] == cap:
                continue
            cand = list(cur)
            cand[i] -= 1
            cand[j] += 1
            cand = tuple(cand)
            v = value(cand)
            if v > cur_v + 1e-15 and (best_move is None or v > best_move[1]):
                best_move = (cand, v)
        if best_move is None:
            return cur, cur_v
        cur, cur_v = best_move


# ------------------------------------------------------------ equilibrium


@dataclass
class SmallGame:
    """A small participation game with exactly computable expectations.

    Each candidate has a finitely supported gain ``outcomes[m]`` (values,
    probs), a weight, and a cost that depends only on whether it ends up
    active. Every participant is active independently with probability
    ``rho``. The collaboration gain is the weighted mean (or the max) of the
    active participants' realized gains, and ``empty_gain`` when nobody is
    active.
    """

    outcomes: Dict[Hashable, tuple]
    weights: Dict[Hashable, float]
    cost_active: Dict[Hashable, float]
    cost_idle: Dict[Hashable, float]
    rho: float = 1.0
    lam: float = 0.0
    gain_map: str = "mean"
    empty_gain: float = 0.0
    utility: UtilityIncome = field(default_factory=UtilityIncome)
    max_candidates: int = 6
    budget: int = 200_000

    def __post_init__(self):
        if self.gain_map not in ("mean", "max"):
            raise ValueError("gain_map must be 'mean' or 'max'")
        if not (0 < self.rho <= 1):
            raise ValueError("rho must lie in (0, 1]")
        keys = set(self.outcomes)
        for name in ("weights", "cost_active", "cost_idle"):
            if set(getattr(self, name)) != keys:
                raise ValueError(f"{name} must be keyed by the candidates")

    @property
    def candidates(self):
        return sorted(self.outcomes, key=_sort_key)

    def check_size(self):
        if len(self.outcomes) > self.max_candidates:
            raise InstanceTooLarge(f"{len(self.outcomes)} candidates exceed {self.max_candidates}")
        cost = math.prod(1 + len(self.outcomes[m][0]) for m in self.outcomes)
        if cost > self.budget:
            raise InstanceTooLarge(f"enumeration needs {cost} terms, budget {self.budget}")

    def collab_gain(self, active, draws):
        if not active:
            return self.empty_gain
        vals = [draws[m] for m in active]
        if self.gain_map == "max":
            return max(vals)
        w = [self.weights[m] for m in active]
        return math.fsum(wi * v for wi, v in zip(w, vals)) / math.fsum(w)

    def expected_cost(self, m):
        return self.rho * self.cost_active[m] + (1 - self.rho) * self.cost_idle[m]

    def expected_local_income(self, m):
        vals, probs = self.outcomes[m]
        return math.fsum(p * self.utility(v) for v, p in zip(vals, probs))

    def expected_collab_income(self, members):
        """E[U(z_A)] when ``members`` participate."""
        members = sorted(members, key=_sort_key)
        total = []
        for r in range(len(members) + 1):
            for active in itertools.combinations(members, r):
                p_sel = self.rho ** r * (1 - self.rho) ** (len(members) - r)
                if p_sel == 0:
                    continue
                if not active:
                    total.append(p_sel * self.utility(self.empty_gain))
                    continue
                supports = [list(zip(*self.outcomes[m])) for m in active]
                for combo in itertools.product(*supports):
                    p = p_sel
                    draws = {}
                    for m, (v, pv) in zip(active, combo):
                        p *= pv
                        draws[m] = v
                    total.append(p * self.utility(self.collab_gain(active, draws)))
        return math.fsum(total)


@dataclass
class CandidateCheck:
    participates: bool
    parti: bool
    sys: bool

    @property
    def consistent(self):
        return self.participates == (self.parti and self.sys)


@dataclass
class EquilibriumReport:
    checks: Dict[Hashable, CandidateCheck]
    is_equilibrium: bool


def nash_check(game: SmallGame, profile: Iterable) -> EquilibriumReport:
    """Check participation and system incentives for every candidate at ``profile``."""
    game.check_size()
    profile = frozenset(profile)
    checks = {}
    for m in game.candidates:
        with_m = profile | {m}
        without_m = profile - {m}
        ec = game.expected_cost(m)
        inc_with = game.expected_collab_income(with_m)
        inc_without = game.expected_collab_income(without_m)
        parti = incent_parti(ec, inc_with, game.expected_local_income(m))
        sys_ok = incent_sys(game.lam, ec, inc_with, inc_without)
        checks[m] = CandidateCheck(m in profile, parti, sys_ok)
    return EquilibriumReport(checks, all(c.consistent for c in checks.values()))
