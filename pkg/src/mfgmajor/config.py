"""JSON configuration parsing and CSV/JSON output writers."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .harness import COLUMNS, ConvergenceTable, RateFit, VerifyReport
from .lq_model import COST_KEYS, LqSpec
from .master import MasterSolution
from .nash import NashSolution
from .simulator import DeviationReport, Mu0, PathBundle, SimConfig

__all__ = ["parse_config", "load_config", "config_to_dict", "save_config", "write_outputs", "read_csv"]

MODEL_KEYS = ("d", "d0", "T") + tuple(COST_KEYS)
SIM_KEYS = ("mu0", "x0_init", "dt", "paths", "seed", "cloud_size")
MU0_PARAMS = {"uniform": ("low", "high"), "gaussian": ("mean", "std")}
FLOAT_FMT = "%.17g"


def _mu0(doc):
    if not isinstance(doc, dict):
        raise ConfigError("must be an object with 'type' and 'params'", key="mu0")
    for k in doc:
        if k not in ("type", "params"):
            raise ConfigError(f"unknown key {k!r}", key=f"mu0.{k}")
    kind = doc.get("type", "uniform")
    if kind not in MU0_PARAMS:
        raise ConfigError(f"unknown initial law {kind!r}", key="mu0.type")
    names = MU0_PARAMS[kind]
    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("must be an object", key="mu0.params")
    for k in params:
        if k not in names:
            raise ConfigError(f"unknown key {k!r}", key=f"mu0.params.{k}")
    defaults = {"low": -1.0, "high": 1.0, "mean": 0.0, "std": 1.0}
    return Mu0(kind, params.get(names[0], defaults[names[0]]), params.get(names[1], defaults[names[1]]))


def parse_config(doc: dict):
    """Build ``(LqSpec, SimConfig)`` from a parsed document; unknown keys are rejected."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object", key="")
    for k in doc:
        if k not in MODEL_KEYS and k not in SIM_KEYS:
            raise ConfigError(f"unknown key {k!r}", key=k)
    for k in ("d", "d0", "T"):
        if k not in doc:
            raise ConfigError("required key is missing", key=k)
    try:
        spec = LqSpec(**{k: doc[k] for k in MODEL_KEYS if k in doc})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), key="") from exc
    sim = {k: doc[k] for k in SIM_KEYS if k in doc and k != "mu0"}
    if "mu0" in doc:
        sim["mu0"] = _mu0(doc["mu0"])
    try:
        cfg = SimConfig(**sim)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), key="") from exc
    try:
        cfg.x0(spec.d0)
        cfg.mu0.mean(spec.d)
    except ValueError as exc:
        raise ConfigError(str(exc), key="x0_init" if "x0_init" in str(exc) else "mu0.params") from exc
    return spec, cfg


def load_config(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}", key="") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc}", key="") from exc
    return parse_config(doc)


def config_to_dict(spec: LqSpec, cfg: SimConfig | None = None):
    cfg = SimConfig() if cfg is None else cfg
    doc = spec.to_dict()
    doc.update(mu0=cfg.mu0.to_dict(), x0_init=cfg.x0_init.tolist(), dt=cfg.dt, paths=cfg.paths, seed=cfg.seed,
               cloud_size=cfg.cloud_size)
    return doc


def save_config(spec: LqSpec, cfg: SimConfig | None, path):
    Path(path).write_text(json.dumps(config_to_dict(spec, cfg), indent=2))


def _write_csv(path, header, rows):
    rows = np.asarray(rows, dtype=float).reshape(-1, len(header))
    np.savetxt(path, rows, fmt=FLOAT_FMT, delimiter=",", header=",".join(header), comments="")


def read_csv(path):
    """Return ``(header, rows)`` of a CSV written by :func:`write_outputs`."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, rows


def write_outputs(obj, path, stride=1):
    """Write a result object: tables, paths and deviation reports as CSV, the rest as JSON."""
    path = Path(path)
    if isinstance(obj, ConvergenceTable):
        _write_csv(path, COLUMNS, obj.data)
    elif isinstance(obj, PathBundle):
        _write_csv(path, obj.columns(), obj.rows(stride))
    elif isinstance(obj, DeviationReport):
        rows = np.column_stack([obj.eps, obj.cost, obj.std_err, obj.diff, obj.diff_std_err])
        _write_csv(path, ["eps", "cost", "std_err", "diff", "diff_std_err"], rows)
    elif isinstance(obj, (MasterSolution, NashSolution)):
        path.write_text(json.dumps(obj.to_json()))
    elif isinstance(obj, (VerifyReport, RateFit)):
        path.write_text(json.dumps(obj.to_dict(), indent=2, default=_json_default))
    else:
        raise TypeError(f"cannot write {type(obj).__name__}")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)
