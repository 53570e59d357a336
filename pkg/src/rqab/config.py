"""JSON model configs shared by the CLI and the grid harness.

A queue config looks like::

    {"lambda": 0.9, "mu": 1.0, "alpha": 0.125,
     "interarrival": {"family": "hyperexp2", "scv": 4},
     "service": "exponential",
     "patience": {"family": "erlang", "shape": 2}}

Distributions are family names or ``{family, mean, scv?, shape?}`` records;
``alpha`` defaults to the reciprocal of the patience mean.
"""

from __future__ import annotations

import json
from pathlib import Path

from .exceptions import ParameterError
from .rqcore import QueueModel, make_model

QUEUE_KEYS = {"lambda", "mu", "alpha", "interarrival", "service", "patience", "idc_csv", "seed"}


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ParameterError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ParameterError(f"{path}: top level must be an object")
    return data


def _number(cfg: dict, key: str, default=None, required: bool = False) -> float | None:
    if cfg.get(key) is None:
        if required:
            raise ParameterError(f"config needs '{key}'")
        return default
    try:
        return float(cfg[key])
    except (TypeError, ValueError):
        raise ParameterError(f"'{key}' must be a number, got {cfg[key]!r}") from None


def model_from_config(cfg: dict, base_dir=None) -> QueueModel:
    unknown = set(cfg) - QUEUE_KEYS
    if unknown:
        raise ParameterError(f"unknown queue config fields {sorted(unknown)}")
    lam = _number(cfg, "lambda", required=True)
    idc = None
    if cfg.get("idc_csv"):
        from .renewal import read_idc_csv

        path = Path(cfg["idc_csv"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        idc = read_idc_csv(path, rate=lam)
    return make_model(
        lam,
        _number(cfg, "mu", 1.0),
        alpha=_number(cfg, "alpha"),
        interarrival=cfg.get("interarrival", "exponential"),
        service=cfg.get("service", "exponential"),
        patience=cfg.get("patience", "exponential"),
        arrival_idc=idc,
        seed=int(cfg.get("seed", 0)),
    )
