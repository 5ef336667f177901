"""Experiment configuration: TOML loading and schema validation.

Every problem found is reported at once as a ``(field_path, message)`` pair.
"""

from __future__ import annotations

import hashlib
import json
import re
import sys
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

BACKENDS = ("fl", "pal", "mab", "oracle")
EMIT = ("csv", "json", "both")


@dataclass(frozen=True)
class Field:
    kind: str  # int | float | bool | str | list | table
    default: Any
    check: Optional[Callable] = None
    rule: str = ""
    choices: tuple = ()
    length: Optional[int] = None


def _rng(lo=None, hi=None, lo_open=False, hi_open=False):
    def check(v):
        if lo is not None and (v < lo or (lo_open and v == lo)):
            return False
        if hi is not None and (v > hi or (hi_open and v == hi)):
            return False
        return True
    left = "(" if lo_open else "["
    right = ")" if hi_open else "]"
    rule = f"in {left}{'-inf' if lo is None else lo}, {'inf' if hi is None else hi}{right}"
    return check, rule


def F(kind, default, lo=None, hi=None, lo_open=False, hi_open=False, choices=(), length=None):
    check, rule = (None, "")
    if lo is not None or hi is not None:
        check, rule = _rng(lo, hi, lo_open, hi_open)
    return Field(kind, default, check, rule, tuple(choices), length)


SCHEMAS: Dict[str, Dict[str, Field]] = {
    "mab": {
        "M": F("int", 50, lo=1),
        "T": F("int", 150, lo=1),
        "epsilon": F("float", 0.1, lo=0, hi=1),
        "b": F("list", [1.0, 5.0, 10.0], lo=0, length=3),
        "kappa": F("list", [2.0, 4.0], length=2),
        "mu_mean": F("float", 3.0),
        "mu_sd": F("float", 1.0, lo=0),
        "s_noise": F("float", 1.0, lo=0, lo_open=True),
        "eps_schedule": F("str", "constant", choices=("constant", "decay")),
        "idle_pays_baseline": F("bool", True),
        "u": F("float", 1.0, lo=0),
        "incentivized": F("bool", True),
        "paired": F("bool", False),
    },
    "fl": {
        "M": F("int", 50, lo=1),
        "T": F("int", 100, lo=1),
        "rho": F("float", 0.1, lo=0, hi=1, lo_open=True),
        "gamma": F("float", 2001.0, lo=1),
        "s": F("float", 0.005, lo=0, lo_open=True),
        "eta": F("float", 0.01, lo=0),
        "lam": F("float", 0.1, lo=0),
        "u": F("float", 1.0, lo=0),
        "theta1_init": F("float", 0.0),
        "byzantine_ratio": F("float", 0.0, lo=0, hi=1),
        "byzantine_type": F("str", "random-modification", choices=("random-modification", "label-flip")),
        "task": F("str", "quadratic", choices=("quadratic", "logistic")),
        "task_params": F("table", {}),
        "weights": F("str", "equal", choices=("equal", "random")),
        "belief_bias": F("float", 1.0, lo=0),
        "incentivized": F("bool", True),
        "paired": F("bool", False),
    },
    "pal": {
        "n_subjects": F("int", 500, lo=10),
        "n_entities": F("int", 3, lo=1),
        "features_per_entity": F("int", 4, lo=1),
        "cross_scale": F("float", 1.0, lo=0),
        "noise": F("float", 0.5, lo=0),
        "prices": F("list", None, lo=0),
        "u": F("float", 1.0, lo=0),
        "T": F("int", 15, lo=1),
        "learner": F("str", "ridge", choices=("ridge", "stumps")),
        "ridge_alpha": F("float", 1e-3, lo=0),
        "stump_rounds": F("int", 20, lo=1),
        "blend": F("float", 0.5, lo=0, hi=1, lo_open=True),
        "patience": F("int", 3, lo=1),
        "split": F("list", [0.6, 0.2, 0.2], lo=0, length=3),
        "paired": F("bool", False),
    },
    "oracle": {
        "n_instances": F("int", 200, lo=1),
        "max_candidates": F("int", 4, lo=1, hi=6),
        "max_support": F("int", 3, lo=1),
        "n_rounds": F("int", 1000, lo=0),
        "theorem3_instances": F("int", 500, lo=0),
    },
}

TASK_SCHEMAS = {
    "quadratic": {
        "dim": F("int", 30, lo=1),
        "mu": F("float", 1.0),
        "noise_sd": F("float", 1.0, lo=0),
        "n_samples": F("int", 10, lo=1),
        "blend": F("float", 0.5, lo=0, hi=1),
    },
    "logistic": {
        "dim": F("int", 5, lo=1),
        "sep": F("float", 1.0, lo=0),
        "n_samples": F("int", 40, lo=1),
        "n_test": F("int", 2000, lo=1),
        "local_steps": F("int", 5, lo=1),
        "full_steps": F("int", 100, lo=1),
        "lr": F("float", 0.5, lo=0, lo_open=True),
        "task_seed": F("int", 0, lo=0),
    },
}

TOP_LEVEL = {"backend", "seeds", "output_dir", "emit", "params"}


@dataclass
class ExperimentConfig:
    backend: str
    params: dict
    seeds: List[int]
    output_dir: str = "out"
    emit: str = "both"

    def digest(self):
        blob = json.dumps({"backend": self.backend, "params": self.params, "seeds": self.seeds,
                           "emit": self.emit}, sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _coerce(path, f: Field, value, issues):
    kind = f.kind
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            issues.append((path, f"expected a number, got {type(value).__name__}"))
            return None
        value = float(value)
    elif kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            issues.append((path, f"expected an integer, got {type(value).__name__}"))
            return None
    elif kind == "bool":
        if not isinstance(value, bool):
            issues.append((path, f"expected a boolean, got {type(value).__name__}"))
            return None
    elif kind == "str":
        if not isinstance(value, str):
            issues.append((path, f"expected a string, got {type(value).__name__}"))
            return None
        if f.choices and value not in f.choices:
            issues.append((path, f"must be one of {', '.join(f.choices)}"))
            return None
        return value
    elif kind == "table":
        if not isinstance(value, dict):
            issues.append((path, "expected a table"))
            return None
        return dict(value)
    elif kind == "list":
        if not isinstance(value, list):
            issues.append((path, "expected a list"))
            return None
        if f.length is not None and len(value) != f.length:
            issues.append((path, f"expected {f.length} entries, got {len(value)}"))
            return None
        out = []
        for k, v in enumerate(value):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                issues.append((f"{path}[{k}]", "expected a number"))
                return None
            if f.check is not None and not f.check(v):
                issues.append((f"{path}[{k}]", f"must be {f.rule}"))
                return None
            out.append(float(v))
        return out
    if f.check is not None and not f.check(value):
        issues.append((path, f"must be {f.rule}"))
        return None
    return value


def _validate_block(prefix, raw, schema, issues):
    out = {}
    for key in sorted(raw):
        if key not in schema:
            issues.append((f"{prefix}{key}", "unknown field"))
    for key, f in schema.items():
        if key in raw:
            out[key] = _coerce(f"{prefix}{key}", f, raw[key], issues)
        else:
            out[key] = f.default if not isinstance(f.default, (list, dict)) else type(f.default)(f.default)
    return out


def _cross_checks(backend, p, issues):
    if backend == "mab":
        if p["kappa"] is not None and p["kappa"][0] > p["kappa"][1]:
            issues.append(("params.kappa", "kappa1 must not exceed kappa2"))
    elif backend == "fl":
        if p["task"] is not None and p["task_params"] is not None:
            p["task_params"] = _validate_block("params.task_params.", p["task_params"], TASK_SCHEMAS[p["task"]], issues)
    elif backend == "pal":
        if p["prices"] is not None and p["n_entities"] is not None and len(p["prices"]) != p["n_entities"]:
            issues.append(("params.prices", f"expected {p['n_entities']} entries, got {len(p['prices'])}"))
        if p["split"] is not None and abs(sum(p["split"]) - 1.0) > 1e-9:
            issues.append(("params.split", "fractions must sum to 1"))
        if p["split"] is not None and min(p["split"]) <= 0:
            issues.append(("params.split", "fractions must be positive"))


def validate(raw: dict) -> ExperimentConfig:
    issues = []
    for key in sorted(raw):
        if key not in TOP_LEVEL:
            issues.append((key, "unknown field"))
    backend = raw.get("backend")
    if backend is None:
        issues.append(("backend", "required field is missing"))
    elif backend not in BACKENDS:
        issues.append(("backend", f"must be one of {', '.join(BACKENDS)}"))
        backend = None
    seeds = raw.get("seeds")
    if seeds is None:
        issues.append(("seeds", "required field is missing"))
    else:
        seeds = validate_seeds(seeds, issues)
    output_dir = raw.get("output_dir", "out")
    if not isinstance(output_dir, str) or not output_dir:
        issues.append(("output_dir", "expected a nonempty string"))
    emit = raw.get("emit", "both")
    if emit not in EMIT:
        issues.append(("emit", f"must be one of {', '.join(EMIT)}"))
    params_raw = raw.get("params", {})
    if not isinstance(params_raw, dict):
        issues.append(("params", "expected a table"))
        params_raw = {}
    params = {}
    if backend is not None:
        params = _validate_block("params.", params_raw, SCHEMAS[backend], issues)
        _cross_checks(backend, params, issues)
    if issues:
        raise ConfigError(issues)
    return ExperimentConfig(backend, params, seeds, output_dir, emit)


def validate_seeds(seeds, issues):
    if not isinstance(seeds, list) or not seeds:
        issues.append(("seeds", "expected a nonempty list of integers"))
        return None
    out = []
    for k, s in enumerate(seeds):
        if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s < 2 ** 64:
            issues.append((f"seeds[{k}]", "expected an integer in [0, 2**64)"))
            return None
        out.append(s)
    if len(set(out)) != len(out):
        issues.append(("seeds", "seeds must be distinct"))
        return None
    return out


_POS = re.compile(r"line (\d+), column (\d+)")


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        raw = tomllib.loads(data.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        if line is None:
            m = _POS.search(str(exc))
            line, col = (int(m.group(1)), int(m.group(2))) if m else (0, 0)
        raise ConfigError([("<parse>", f"line {line}, column {col}: {exc}")]) from None
    except UnicodeDecodeError as exc:
        raise ConfigError([("<parse>", f"not valid UTF-8: {exc}")]) from None
    return validate(raw)


def parse_seed_list(text):
    issues = []
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError([("seeds", f"could not parse {text!r} as a comma-separated list")]) from None
    seeds = validate_seeds(seeds, issues)
    if issues:
        raise ConfigError(issues)
    return seeds
