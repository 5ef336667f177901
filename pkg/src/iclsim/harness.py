"""Multi-seed experiment driver with deterministic CSV and JSON output.

CSV columns, one row per round (pal: one row per round and entity):

    fl   round, n_participants, n_active, collab_gain, system_profit, sum_costs, theta1, theta2
    pal  round, pair_a, pair_b, entity_id, test_error, cost
    mab  round, n_participants, active_arm, reward, cum_reward, cum_balance
    oracle  instance, check, agree

Floats are written with ``repr`` (shortest round-trip form). ``pair_a`` and
``pair_b`` are -1 for an entity training alone; ``active_arm`` is -1 when
no arm was pulled. Paired runs also write ``*_baseline.csv`` with the same
columns for the non-incentivized counterpart.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import oracles
from .al import AlConfig, run_pal, theorem3_check
from .config import ExperimentConfig
from .core import nash_check
from .errors import ConfigError, IclError, SeedMismatch, SeedRunError
from .fl import FlConfig, run_fl
from .mab import MabConfig, MabPricing, run_mab
from .rng import stream

CSV_COLUMNS = {
    "fl": ("round", "n_participants", "n_active", "collab_gain", "system_profit", "sum_costs", "theta1", "theta2"),
    "pal": ("round", "pair_a", "pair_b", "entity_id", "test_error", "cost"),
    "mab": ("round", "n_participants", "active_arm", "reward", "cum_reward", "cum_balance"),
    "oracle": ("instance", "check", "agree"),
}

DEFAULT_METRIC = {"fl": "final_collab_gain", "pal": "mean_final_test_error", "mab": "cum_reward",
                  "oracle": "nash_agreement"}

IDENTITY_TOL = 1e-9
WIN_TARGET = 0.9


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows):
    lines = [",".join(columns)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    """Rows as dicts of strings; the inverse of ``write_csv`` up to typing."""
    with open(path, encoding="utf-8") as fh:
        header, *body = fh.read().splitlines()
    cols = header.split(",")
    return [dict(zip(cols, line.split(","))) for line in body]


# ---------------------------------------------------------- backend adapters


def fl_config(params) -> FlConfig:
    p = {k: v for k, v in params.items() if k != "paired"}
    return FlConfig(**p)


def mab_config(params) -> MabConfig:
    b, kappa = params["b"], params["kappa"]
    pricing = MabPricing(b[0], b[1], b[2], kappa[0], kappa[1])
    keep = ("M", "T", "epsilon", "mu_mean", "mu_sd", "s_noise", "eps_schedule", "idle_pays_baseline", "u")
    return MabConfig(pricing=pricing, **{k: params[k] for k in keep})


def pal_config(params, collaborate=True) -> AlConfig:
    p = {k: v for k, v in params.items() if k != "paired"}
    p["split"] = tuple(p["split"])
    return AlConfig(collaborate=collaborate, **p)


def _ledger_metrics(ledger):
    rounds = ledger.rounds
    resid = ledger.profit_identity_residuals()
    return {
        "final_collab_gain": float(rounds[-1].collab_gain) if rounds else 0.0,
        "cum_system_profit": math.fsum(r.system_profit for r in rounds),
        "cum_balance": math.fsum(math.fsum(r.costs[m] for m in sorted(r.costs)) for r in rounds),
        "max_identity_residual": max(resid) if resid else 0.0,
    }


def _fl_rows(ledger):
    rows = []
    for r in ledger.rounds:
        i = r.info
        rows.append((i["round"], i["n_participants"], i["n_active"], float(r.collab_gain), float(r.system_profit),
                     math.fsum(r.costs[m] for m in sorted(r.costs)), i["theta1"], i["theta2"]))
    return rows


def _mab_rows(ledger):
    return [(r.info["round"], r.info["n_participants"], r.info["active_arm"], float(r.info["reward"]),
             float(r.info["cum_reward"]), float(r.info["cum_balance"])) for r in ledger.rounds]


def _pal_rows(result, n_entities):
    rows = []
    for r in result.ledger.rounds:
        partner = {}
        for a, b in r.info["pairs"]:
            partner[a] = partner[b] = (a, b)
        for i in range(n_entities):
            a, b = partner.get(i, (-1, -1))
            rows.append((r.info["round"], a, b, i, float(r.info["test_error"][i]), float(r.costs.get(i, 0.0))))
    return rows


def _run_fl(params, seed, baseline=False):
    cfg = fl_config(params)
    if baseline:
        cfg.incentivized = False
    ledger = run_fl(cfg, seed)
    return _ledger_metrics(ledger), _fl_rows(ledger)


def _run_mab(params, seed, baseline=False):
    ledger = run_mab(mab_config(params), seed, incentivized=params["incentivized"] and not baseline)
    m = _ledger_metrics(ledger)
    m["cum_reward"] = float(ledger.rounds[-1].info["cum_reward"]) if ledger.rounds else 0.0
    return m, _mab_rows(ledger)


def _run_pal(params, seed, baseline=False):
    cfg = pal_config(params, collaborate=not baseline)
    res = run_pal(cfg, seed)
    m = _ledger_metrics(res.ledger)
    finals = [res.test_errors[i][-1] for i in range(cfg.n_entities)]
    m["final_test_error"] = [float(v) for v in finals]
    m["mean_final_test_error"] = math.fsum(finals) / len(finals)
    m["zero_balance"] = all(math.fsum(r.costs[k] for k in sorted(r.costs)) == 0.0 for r in res.ledger.rounds)
    return m, _pal_rows(res, cfg.n_entities)


def _run_oracle(params, seed):
    rows = []
    n = 0
    rng = stream(seed, "oracle", "nash")
    nash_ok = 0
    for k in range(params["n_instances"]):
        g = oracles.random_small_game(rng, params["max_candidates"], params["max_support"])
        prof = oracles.random_profile(rng, g)
        ok = nash_check(g, prof).is_equilibrium == oracles.best_response_equilibrium(g, prof)
        nash_ok += ok
        rows.append((n, "nash", ok))
        n += 1
    rng = stream(seed, "oracle", "prop1")
    p1_ok = 0
    for k in range(params["n_rounds"]):
        obj, welfare = oracles.prop1_round(rng)
        ok = abs(obj - welfare) <= IDENTITY_TOL * max(1.0, abs(obj))
        p1_ok += ok
        rows.append((n, "prop1", ok))
        n += 1
    rng = stream(seed, "oracle", "theorem3")
    t3_ok = 0
    for k in range(params["theorem3_instances"]):
        inst = oracles.random_theorem3_instance(rng)
        ok = theorem3_check(*inst) == oracles.consensus_by_simulation(*inst)
        t3_ok += ok
        rows.append((n, "theorem3", ok))
        n += 1

    def rate(hits, total):
        return hits / total if total else 1.0

    metrics = {
        "nash_agreement": rate(nash_ok, params["n_instances"]),
        "prop1_agreement": rate(p1_ok, params["n_rounds"]),
        "theorem3_agreement": rate(t3_ok, params["theorem3_instances"]),
    }
    return metrics, rows


def _win(backend, main, base):
    if backend == "mab":
        return main["cum_reward"] > base["cum_reward"]
    if backend == "fl":
        return main["final_collab_gain"] > base["final_collab_gain"]
    # pal: lower test error is better, for every entity
    return all(a < b for a, b in zip(main["final_test_error"], base["final_test_error"]))


def _csv_name(backend, seed, suffix=""):
    return f"{backend}_seed{seed}{suffix}.csv"


def run_seed(backend, params, seed, out_dir, emit="both"):
    """Run one seed, write its CSV file(s) and return its summary row."""
    try:
        if backend == "oracle":
            metrics, rows = _run_oracle(params, seed)
            base = None
        else:
            runner = {"fl": _run_fl, "mab": _run_mab, "pal": _run_pal}[backend]
            metrics, rows = runner(params, seed)
            base = runner(params, seed, baseline=True) if params.get("paired") else None
    except IclError as exc:
        raise SeedRunError(seed, exc) from exc
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise SeedRunError(seed, exc) from exc
    if emit in ("csv", "both"):
        write_csv(os.path.join(out_dir, _csv_name(backend, seed)), CSV_COLUMNS[backend], rows)
        if base is not None:
            write_csv(os.path.join(out_dir, _csv_name(backend, seed, "_baseline")), CSV_COLUMNS[backend], base[1])
    row = {"seed": seed, **metrics}
    if base is not None:
        row["baseline"] = base[0]
        row["win"] = _win(backend, metrics, base[0])
    return row


def _agg(values):
    vals = [float(v) for v in values]
    n = len(vals)
    mean = math.fsum(vals) / n
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1)) if n > 1 else 0.0
    return {"mean": mean, "std": sd}


def aggregate(per_seed):
    """Mean and sample standard deviation of every scalar metric."""
    keys = sorted(k for k, v in per_seed[0].items()
                  if k != "seed" and isinstance(v, (int, float)) and not isinstance(v, bool))
    return {k: _agg(row[k] for row in per_seed) for k in keys}


def checks(backend, per_seed):
    out = {}
    if backend == "oracle":
        for k in ("nash_agreement", "prop1_agreement", "theorem3_agreement"):
            out[k] = all(row[k] == 1.0 for row in per_seed)
        return out
    out["profit_identity"] = all(row["max_identity_residual"] <= IDENTITY_TOL for row in per_seed)
    if backend == "pal":
        out["zero_balance"] = all(row["zero_balance"] for row in per_seed)
    if backend == "mab":
        nonneg = sum(row["cum_balance"] >= 0 for row in per_seed) / len(per_seed)
        out["nonnegative_balance"] = nonneg >= WIN_TARGET
    if "win" in per_seed[0]:
        out["beats_baseline"] = sum(row["win"] for row in per_seed) / len(per_seed) >= WIN_TARGET
    return out


@dataclass
class RunSummary:
    backend: str
    config_digest: str
    per_seed: list
    aggregate: dict
    checks: dict
    files: list = field(default_factory=list)

    @property
    def passed(self):
        return all(self.checks.values())

    def to_json(self):
        blob = {"backend": self.backend, "config_digest": self.config_digest, "per_seed": self.per_seed,
                "aggregate": self.aggregate, "checks": self.checks}
        return json.dumps(blob, sort_keys=True, indent=2) + "\n"


def run_batch(config: ExperimentConfig, out_dir=None, jobs=1) -> RunSummary:
    """Run every seed, write the per-seed CSVs and the summary JSON."""
    out_dir = out_dir or config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    args = [(config.backend, config.params, s, out_dir, config.emit) for s in config.seeds]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
            per_seed = list(pool.map(run_seed, *zip(*args)))
    else:
        per_seed = [run_seed(*a) for a in args]
    summary = RunSummary(config.backend, config.digest(), per_seed, aggregate(per_seed),
                         checks(config.backend, per_seed))
    if config.emit in ("csv", "both"):
        for s in config.seeds:
            summary.files.append(os.path.join(out_dir, _csv_name(config.backend, s)))
            if config.params.get("paired"):
                summary.files.append(os.path.join(out_dir, _csv_name(config.backend, s, "_baseline")))
    if config.emit in ("json", "both"):
        path = os.path.join(out_dir, f"{config.backend}_summary.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(summary.to_json())
        summary.files.append(path)
    return summary


def load_summary(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _as_dict(summary):
    if isinstance(summary, RunSummary):
        return json.loads(summary.to_json())
    return summary


def compare_runs(summary_a, summary_b, metric=None):
    """Per-seed deltas ``a - b`` on ``metric`` and the fraction of seeds where a wins.

    A tie counts as half a win. For error metrics (names containing
    ``error``) lower is better.
    """
    a, b = _as_dict(summary_a), _as_dict(summary_b)
    metric = metric or DEFAULT_METRIC.get(a.get("backend"), "final_collab_gain")
    rows_a = {r["seed"]: r for r in a["per_seed"]}
    rows_b = {r["seed"]: r for r in b["per_seed"]}
    if set(rows_a) != set(rows_b):
        raise SeedMismatch(f"seed lists differ: {sorted(set(rows_a) ^ set(rows_b))}")
    lower_better = "error" in metric
    deltas, score = [], 0.0
    for s in [r["seed"] for r in a["per_seed"]]:
        if metric not in rows_a[s] or metric not in rows_b[s]:
            raise ConfigError([("metric", f"{metric!r} is not reported for seed {s}")])
        d = float(rows_a[s][metric]) - float(rows_b[s][metric])
        deltas.append({"seed": s, "delta": d})
        if d == 0:
            score += 0.5
        elif (d < 0) == lower_better:
            score += 1.0
    return {"metric": metric, "deltas": deltas, "win_fraction": score / len(deltas)}
