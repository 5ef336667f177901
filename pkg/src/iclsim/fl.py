"""Incentivized federated learning on synthetic tasks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .core import GainModel, GameLedger, SystemObjectiveParams, UtilityIncome, optimize_selection, \
    expected_selection_gain
from .errors import EmptyActiveSet, InstanceTooLarge, NonFiniteGradient, UninitializedHistory
from .rng import as_generator, stream

BYZANTINE_KINDS = ("none", "random-modification", "label-flip")


# ------------------------------------------------------------------ tasks


@dataclass
class QuadraticTask:
    """Mean estimation: clients hold noisy samples of ``mu_star``.

    The local update blends the received global model with the local sample
    mean; the loss is the squared distance to ``mu_star``.
    """

    dim: int = 30
    mu: float = 1.0
    noise_sd: float = 1.0
    n_samples: int = 10
    blend: float = 0.5

    def __post_init__(self):
        self.mu_star = np.full(self.dim, float(self.mu))

    @property
    def model_dim(self):
        return self.dim

    def init_model(self):
        return np.zeros(self.dim)

    def loss(self, x):
        d = np.asarray(x, float) - self.mu_star
        return float(d @ d)

    def loss_grad(self, x):
        return 2.0 * (np.asarray(x, float) - self.mu_star)

    def sample_data(self, rng):
        return self.mu_star + self.noise_sd * rng.standard_normal((self.n_samples, self.dim))

    def flip(self, data):
        # reflect samples about the origin
        return -data

    def fit_local(self, data, start=None):
        return data.mean(axis=0)

    def local_update(self, global_model, data):
        return (1.0 - self.blend) * global_model + self.blend * data.mean(axis=0)


@dataclass
class LogisticTask:
    """Two Gaussian blobs at +-``sep`` along a random unit direction."""

    dim: int = 5
    sep: float = 1.0
    n_samples: int = 40
    n_test: int = 2000
    local_steps: int = 5
    full_steps: int = 100
    lr: float = 0.5
    task_seed: int = 0

    def __post_init__(self):
        rng = stream(self.task_seed, "logistic_task")
        v = rng.standard_normal(self.dim)
        self.direction = v / np.linalg.norm(v)
        self.X_test, self.y_test = self._draw(rng, self.n_test)

    @property
    def model_dim(self):
        return self.dim + 1

    def _draw(self, rng, n):
        y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        X = rng.standard_normal((n, self.dim)) + np.outer(y * self.sep, self.direction)
        return X, y

    def init_model(self):
        return np.zeros(self.dim + 1)

    @staticmethod
    def _loss_on(x, X, y):
        m = y * (X @ x[:-1] + x[-1])
        return float(np.mean(np.logaddexp(0.0, -m)))

    @staticmethod
    def _grad_on(x, X, y):
        m = y * (X @ x[:-1] + x[-1])
        g = -y * expit(-m)
        return np.concatenate([X.T @ g, [g.sum()]]) / len(y)

    def loss(self, x):
        return self._loss_on(np.asarray(x, float), self.X_test, self.y_test)

    def loss_grad(self, x):
        return self._grad_on(np.asarray(x, float), self.X_test, self.y_test)

    def sample_data(self, rng):
        return self._draw(rng, self.n_samples)

    def flip(self, data):
        X, y = data
        return X, -y

    def _descend(self, x, data, steps):
        X, y = data
        x = np.array(x, float)
        for _ in range(steps):
            x -= self.lr * self._grad_on(x, X, y)
        return x

    def fit_local(self, data, start=None):
        start = self.init_model() if start is None else start
        return self._descend(start, data, self.full_steps)

    def local_update(self, global_model, data):
        return self._descend(global_model, data, self.local_steps)


def make_task(kind, **params):
    if kind == "quadratic":
        return QuadraticTask(**params)
    if kind == "logistic":
        return LogisticTask(**params)
    raise ValueError(f"unknown task {kind!r}")


# -------------------------------------------------------------- primitives


@dataclass
class FlClient:
    id: int
    weight: float
    data: object
    byzantine: str = "none"
    belief_bias: float = 1.0
    model: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError("client weight must be positive")
        if self.byzantine not in BYZANTINE_KINDS:
            raise ValueError(f"unknown byzantine kind {self.byzantine!r}")
        if self.belief_bias < 0:
            raise ValueError("belief_bias must be >= 0")


@dataclass
class FlPricingParams:
    theta1: float = 0.0
    theta2: float = 0.0
    gamma: float = 2001.0
    rho: float = 0.1
    s: float = 0.005
    eta: float = 0.01

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError("s must be > 0")
        if not self.gamma >= 1:
            raise ValueError("gamma must be >= 1")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if not self.eta >= 0:
            raise ValueError("eta must be >= 0")


@dataclass
class FlRoundState:
    xbar: np.ndarray
    zbar: float
    tau: np.ndarray
    z_tau: np.ndarray


def aggregate(models, weights, active):
    active = sorted(active)
    if not active:
        raise EmptyActiveSet("cannot aggregate an empty active set")
    w = np.array([weights[i] for i in active], float)
    X = np.array([models[i] for i in active], float)
    return (w @ X) / w.sum()


def gain(model, task):
    return -task.loss(model)


def sigmoid(v, s):
    """Logistic function of v/s, computed so that sigmoid(-v) + sigmoid(v) == 1."""
    v = np.asarray(v, float) / s
    pos = 1.0 / (1.0 + np.exp(-np.abs(v)))
    out = np.where(v >= 0, pos, 1.0 - pos)
    return float(out) if out.ndim == 0 else out


def fl_cost(zbar, z_m, is_active, p: FlPricingParams):
    base = p.theta1 * zbar
    if not is_active:
        return base
    return base + p.theta1 * zbar * (-1.0 + p.gamma * sigmoid(zbar - z_m - p.theta2, p.s))


def expected_cost(zbar_tau, z_tau, theta, p: FlPricingParams):
    """rho-weighted expected cost of each client at its last-active state."""
    th1, th2 = theta
    return th1 * zbar_tau * (1.0 + p.rho * (-1.0 + p.gamma * sigmoid(zbar_tau - z_tau - th2, p.s)))


def client_delta(zbar_prev, z_tau, exp_cost, utility=None, belief_bias=1.0):
    utility = utility or UtilityIncome()
    return belief_bias * utility(zbar_prev) - utility(z_tau) - exp_cost


def client_decide(delta):
    return bool(delta > 0)


def jenks_two_class(values):
    """Threshold of the 1-D two-class split with least within-class variance.

    Returns the midpoint between the two classes, or the common value when
    there is nothing to split.
    """
    v = np.sort(np.asarray(values, float))
    n = len(v)
    if n == 0:
        raise ValueError("need at least one value")
    if n == 1 or v[0] == v[-1]:
        return float(v[0])
    c1 = np.cumsum(v)
    c2 = np.cumsum(v * v)
    k = np.arange(1, n)
    left = c2[k - 1] - c1[k - 1] ** 2 / k
    right = (c2[-1] - c2[k - 1]) - (c1[-1] - c1[k - 1]) ** 2 / (n - k)
    best = int(np.argmin(left + right)) + 1
    return float(0.5 * (v[best - 1] + v[best]))


@dataclass
class FlHistory:
    """Per-client last-active quantities the server uses to score pricing.

    ``deviation[m]`` is (zeta_m / sum of active weights at tau) times the
    inner product of f'(xbar_tau) with (xbar_tau - x_m,tau).
    """

    zbar_prev: float
    z_tau: np.ndarray
    zbar_tau: np.ndarray
    deviation: np.ndarray
    belief_bias: np.ndarray
    utility: UtilityIncome = field(default_factory=UtilityIncome)

    def check(self):
        if not (np.all(np.isfinite(self.z_tau)) and np.all(np.isfinite(self.zbar_tau))
                and np.all(np.isfinite(self.deviation)) and math.isfinite(self.zbar_prev)):
            raise UninitializedHistory("every client needs a recorded last-active state")


def server_objective(hist: FlHistory, theta, lam, p: FlPricingParams):
    hist.check()
    C = expected_cost(hist.zbar_tau, hist.z_tau, theta, p)
    delta = client_delta(hist.zbar_prev, hist.z_tau, C, hist.utility, hist.belief_bias)
    return float(np.sum(sigmoid(delta, p.s) * (lam * C - hist.deviation)))


def objective_gradient(hist, theta, lam, p, h=1e-5):
    theta = np.asarray(theta, float)
    g = np.zeros(2)
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        g[k] = (server_objective(hist, theta + e, lam, p) - server_objective(hist, theta - e, lam, p)) / (2 * h)
    return g


def server_update(theta, grad, eta):
    grad = np.asarray(grad, float)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient(f"gradient {grad} is not finite")
    out = np.asarray(theta, float) + eta * grad
    if not np.all(np.isfinite(out)):
        raise NonFiniteGradient(f"updated theta {out} is not finite")
    return out


# -------------------------------------------------------------- simulation


@dataclass
class FlConfig:
    M: int = 50
    T: int = 100
    rho: float = 0.1
    gamma: float = 2001.0
    s: float = 0.005
    eta: float = 0.01
    lam: float = 0.1
    u: float = 1.0
    theta1_init: float = 0.0
    byzantine_ratio: float = 0.0
    byzantine_type: str = "random-modification"
    byzantine_low: float = -0.25
    byzantine_high: float = 0.25
    task: str = "quadratic"
    task_params: dict = field(default_factory=dict)
    weights: str = "equal"  # or "random": zeta ~ Uniform[0.5, 1.5]
    belief_bias: float = 1.0
    incentivized: bool = True

    def __post_init__(self):
        if self.M < 1 or self.T < 1:
            raise ValueError("M and T must be >= 1")
        FlPricingParams(self.theta1_init, 0.0, self.gamma, self.rho, self.s, self.eta)
        if not (0 <= self.byzantine_ratio <= 1):
            raise ValueError("byzantine_ratio must lie in [0, 1]")
        if self.byzantine_type not in BYZANTINE_KINDS[1:]:
            raise ValueError(f"byzantine_type must be one of {BYZANTINE_KINDS[1:]}")
        if self.lam < 0 or self.u < 0:
            raise ValueError("lam and u must be >= 0")
        if self.weights not in ("equal", "random"):
            raise ValueError("weights must be 'equal' or 'random'")


def _setup_clients(config, task, seed):
    M = config.M
    n_byz = int(math.floor(config.byzantine_ratio * M + 1e-9))
    byz_ids = set(stream(seed, "fl", "byzantine").permutation(M)[:n_byz].tolist())
    data_rng = stream(seed, "fl", "data")
    if config.weights == "random":
        zeta = stream(seed, "fl", "weights").uniform(0.5, 1.5, size=M)
    else:
        zeta = np.ones(M)
    clients = []
    for m in range(M):
        kind = config.byzantine_type if m in byz_ids else "none"
        data = task.sample_data(data_rng)
        if kind == "label-flip":
            data = task.flip(data)
        clients.append(FlClient(m, float(zeta[m]), data, kind, config.belief_bias))
    return clients


def run_fl(config: FlConfig, seed, task=None) -> GameLedger:
    """Run the incentivized FL loop (or the full-participation baseline)."""
    task = task or make_task(config.task, **config.task_params)
    M = config.M
    U = UtilityIncome("linear", config.u)
    clients = _setup_clients(config, task, seed)
    weights = {c.id: c.weight for c in clients}
    byz_rng = stream(seed, "fl", "byzantine_models")
    sel_rng = stream(seed, "fl", "select")
    d = task.model_dim

    def submit(c, xbar, initial=False):
        if c.byzantine == "random-modification":
            return byz_rng.uniform(config.byzantine_low, config.byzantine_high, size=d)
        if initial:
            return task.fit_local(c.data, xbar)
        return task.local_update(xbar, c.data)

    # round 0: every client is active once so each has a last-active state
    xbar = task.init_model()
    models = {c.id: submit(c, xbar, initial=True) for c in clients}
    xbar = aggregate(models, weights, range(M))
    zbar = gain(xbar, task)
    x_tau = np.array([models[m] for m in range(M)])
    z_tau = np.array([gain(models[m], task) for m in range(M)])
    xbar_tau = np.tile(xbar, (M, 1))
    zbar_tau = np.full(M, zbar)
    wsum_tau = np.full(M, sum(weights.values()))
    tau = np.zeros(M, int)
    zeta = np.array([weights[m] for m in range(M)])
    bias = np.array([c.belief_bias for c in clients])

    params = FlPricingParams(config.theta1_init, 0.0, config.gamma, config.rho, config.s, config.eta)
    theta = np.array([config.theta1_init, 0.0])
    ledger = GameLedger(frozenset(range(M)), U, SystemObjectiveParams(config.lam))

    for t in range(1, config.T + 1):
        if config.incentivized:
            # server strategy
            fprime = -config.u * np.array([task.loss_grad(xbar_tau[m]) for m in range(M)])
            dev = zeta / wsum_tau * np.einsum("ij,ij->i", fprime, xbar_tau - x_tau)
            hist = FlHistory(zbar, z_tau.copy(), zbar_tau.copy(), dev, bias, U)
            theta = np.array([theta[0], jenks_two_class(zbar_tau - z_tau)])
            grad = objective_gradient(hist, theta, config.lam, params)
            theta = server_update(theta, grad, config.eta)
            params.theta1, params.theta2 = float(theta[0]), float(theta[1])
            # client strategy
            C = expected_cost(zbar_tau, z_tau, theta, params)
            delta = client_delta(zbar, z_tau, C, U, bias)
            parts = [m for m in range(M) if client_decide(delta[m])]
        else:
            parts = list(range(M))

        if parts:
            k = max(int(math.floor(config.rho * len(parts))), 1)
            active = sorted(sel_rng.choice(parts, size=k, replace=False).tolist())
            new = {m: submit(clients[m], xbar) for m in active}
            xbar = aggregate(new, weights, active)
            zbar = gain(xbar, task)
            wsum = sum(weights[m] for m in active)
            for m in active:
                x_tau[m] = new[m]
                z_tau[m] = gain(new[m], task)
                xbar_tau[m] = xbar
                zbar_tau[m] = zbar
                wsum_tau[m] = wsum
                tau[m] = t
        else:
            active = []
        act = set(active)
        costs = {}
        for m in parts:
            costs[m] = fl_cost(zbar, z_tau[m], m in act, params) if config.incentivized else 0.0
        realized = {m: float(z_tau[m]) for m in parts}
        ledger.record_round(parts, act, realized, zbar, costs, info={
            "round": t,
            "n_participants": len(parts),
            "n_active": len(active),
            "theta1": float(theta[0]),
            "theta2": float(theta[1]),
            "n_byzantine_participants": sum(clients[m].byzantine != "none" for m in parts),
        })
    return ledger


# ------------------------------------------------------ large-sample checks


def theorem2_residual(K, rho, weights, models, seed, bound=None, max_resamples=10_000):
    """l1 distance between the Bernoulli(rho)-subsampled and the full weighted mean.

    Returns ``(residual, resamples)``; draws that select nobody are redrawn.
    With ``bound`` set, weights and weighted model entries must not exceed it.
    """
    if K < 10:
        raise ValueError("K must be >= 10")
    w = np.asarray(weights, float)[:K]
    X = np.asarray(models, float)[:K]
    if X.ndim == 1:
        X = X[:, None]
    if len(w) != K or len(X) != K:
        raise ValueError("need K weights and K models")
    if bound is not None and (np.abs(w).max() > bound or np.abs(w[:, None] * X).max() > bound):
        raise ValueError(f"weights or weighted models exceed the bound {bound}")
    # centre on the first model so identical models give exactly zero
    D = X - X[0]
    full = (w @ D) / w.sum()
    rng = as_generator(seed, "theorem2")
    for resamples in range(max_resamples):
        b = rng.random(K) < rho
        if b.any():
            sub = (w[b] @ D[b]) / w[b].sum()
            return float(np.abs(sub - full).sum()), resamples
    raise RuntimeError("no nonempty draw within the resample limit")


def prop2_loss(q, means, sigma, target, budget=2_000_000):
    """Expected loss E(xbar_A - target)^2 under selection q.

    The variance part uses sigma^2 / (rho |P|); the bias part is the exact
    expectation over Bernoulli(q) active sets given A is nonempty.
    """
    q = np.asarray(q, float)
    n = len(means)
    rho = q.sum() / n
    t1 = sigma ** 2 / (rho * n)
    models = [GainModel.point(m) for m in means]
    t2 = -expected_selection_gain(q, models, target, budget=budget)
    return t1 + t2


def prop2_ratio(means, sigma, rho, target=0.0, budget=2_000_000, seed=0, step=0.05):
    """Efficiency of uniform selection relative to the optimized selection.

    Both utilities are negative expected losses, so the ratio is reported
    as U(q*) / U(q_uniform) = loss(q*) / loss(q_uniform), which lies in
    (0, 1] and equals 1 when uniform selection is optimal.
    """
    means = [float(m) for m in means]
    n = len(means)
    if n > 12:
        raise InstanceTooLarge("prop2_ratio supports at most 12 participants")
    models = {i: GainModel.point(m) for i, m in enumerate(means)}
    best = optimize_selection(rho, models, target, budget=budget, step=step, seed=seed)
    q_star = np.array([best.selection.q[i] for i in range(n)])
    q_unif = np.full(n, rho)
    loss_star = prop2_loss(q_star, means, sigma, target, budget)
    loss_unif = prop2_loss(q_unif, means, sigma, target, budget)
    # grid search can only land on the uniform vector or something better
    loss_star = min(loss_star, loss_unif)
    return loss_star / loss_unif
