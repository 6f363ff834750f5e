"""Run configuration: defaults, JSON loading, dotted-path overrides and validation."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .davies import JUMP_FAMILIES, RATE_FAMILIES
from .lattice import GeometryError, Rectangle, TorusGeometry

SUITES = ("marginal", "ds", "kernel", "condexp", "factorization", "martingale", "gap", "mixing",
          "recursion")


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "group": [2],
    "N": 2,
    "betas": [0.5, 1.0],
    "suites": list(SUITES),
    "seed": 0,
    "model": {"jump_family": "shift_modulation", "rate_family": "sqrt_boltzmann"},
    "caps": {"dim": 2**20, "dense": 4096, "choi": 4096},
    "output": {"dir": "qdlab_out", "figures": True},
    "params": {
        "marginal": {"groups": [[2], [3]], "N_values": [3, 4], "betas": [0.0, 0.5, 1.0, 2.0],
                     "max_edges": 7, "tol": 1e-10},
        "ds": {"N_values": [6, 8, 10, 12], "dists": [2, 3, 4], "d0": 2, "n_samples": 2000,
               "identity_tol": 1e-10},
        "kernel": {"rectangle": {"anchor": [0, 0], "lengths": [1, 1]}, "betas": [0.0, 1.0],
                   "tol": 1e-7},
        "condexp": {"rectangle": {"anchor": [0, 0], "lengths": [1, 1]}, "betas": [1.0],
                    "n_probes": 4, "semigroup_time": 40.0},
        "factorization": {"max_edges": None, "tol": 1e-12},
        "martingale": {"N": 8, "dist": 2, "d0": 2, "n_probes": 3,
                       "relaxed": {"N": 2, "pair": 0}},
        "gap": {"residual_tol": 1e-8, "gns_tol": 1e-10, "fixed_point_tol": 1e-11,
                "negative_controls": True},
        "mixing": {"betas": [1.0], "n_states": 20, "n_times": 20, "mlsi_restarts": 32,
                   "mlsi_maxiter": 100},
        "recursion": {"L0_values": [64, 125, 1000], "horizon": 30},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_value(text: str) -> Any:
    """JSON literal if it parses, plain string otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_dotted(data: dict, path: str, value: Any) -> None:
    keys = path.split(".")
    node = data
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = value


@dataclass
class RunConfig:
    data: dict

    @classmethod
    def from_dict(cls, raw: dict | None = None, overrides: list[str] | None = None) -> "RunConfig":
        data = _merge(DEFAULTS, raw or {})
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override '{item}' is not of the form key.path=value")
            key, val = item.split("=", 1)
            set_dotted(data, key.strip(), parse_value(val.strip()))
        cfg = cls(data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None, overrides: list[str] | None = None) -> "RunConfig":
        raw = {}
        if path is not None:
            try:
                raw = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(raw, dict):
                raise ConfigError("config root must be a mapping")
        return cls.from_dict(raw, overrides)

    # -- accessors -----------------------------------------------------------
    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    def params(self, suite: str) -> dict:
        p = dict(self.data["params"].get(suite, {}))
        p.setdefault("betas", self.data["betas"])
        return p

    @property
    def suites(self) -> list[str]:
        return list(self.data["suites"])

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2)

    # -- validation ----------------------------------------------------------
    def validate(self) -> None:
        d = self.data
        errors = []
        extra = sorted(set(d) - set(DEFAULTS))
        if extra:
            errors.append(f"unknown config keys {extra}")
        extra = sorted(set(d["params"]) - set(SUITES))
        if extra:
            errors.append(f"unknown suite parameter blocks {extra}")
        for k, v in d["caps"].items():
            if not isinstance(v, int) or v < 1:
                errors.append(f"caps.{k} must be a positive integer")
        unknown = [s for s in d["suites"] if s not in SUITES]
        if unknown:
            errors.append(f"unknown suites {unknown}")
        if not isinstance(d["N"], int) or d["N"] < 2:
            errors.append("N must be an integer >= 2")
        for g in [d["group"]] + [gg for gg in d["params"]["marginal"].get("groups", [])]:
            gl = [g] if isinstance(g, int) else g
            if not gl or not all(isinstance(x, int) and x >= 2 for x in gl):
                errors.append(f"group factors {g} must be integers >= 2")
        betas = list(d["betas"])
        for s in SUITES:
            betas += list(d["params"].get(s, {}).get("betas", []))
        if not all(isinstance(b, (int, float)) and math.isfinite(b) and b >= 0 for b in betas):
            errors.append("beta values must be finite and >= 0")
        m = d["model"]
        if m.get("jump_family") not in JUMP_FAMILIES:
            errors.append(f"jump_family must be one of {JUMP_FAMILIES}")
        if m.get("rate_family") not in RATE_FAMILIES:
            errors.append(f"rate_family must be one of {RATE_FAMILIES}")
        if not isinstance(d["seed"], int):
            errors.append("seed must be an integer")
        if not errors and isinstance(d["N"], int):
            torus = TorusGeometry(d["N"])
            for suite in ("kernel", "condexp"):
                spec = d["params"][suite].get("rectangle")
                try:
                    Rectangle.from_config(torus, spec)
                except (GeometryError, KeyError, TypeError, ValueError) as exc:
                    errors.append(f"{suite}.rectangle invalid on N={d['N']}: {exc}")
            for N in d["params"]["marginal"].get("N_values", []) + d["params"]["ds"].get("N_values", []):
                if not isinstance(N, int) or N < 2:
                    errors.append(f"torus size {N} must be an integer >= 2")
            for L0 in d["params"]["recursion"].get("L0_values", []):
                if not (isinstance(L0, (int, float)) and L0 >= 1):
                    errors.append(f"L0 value {L0} must be >= 1")
        if errors:
            raise ConfigError("; ".join(errors))
