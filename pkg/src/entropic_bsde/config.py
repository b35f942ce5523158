"""Experiment configuration: JSON parsing into a validated model and run options.

Errors name the offending field (``model.R``) or, for malformed JSON, the
line, column and byte offset.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .artifacts import sha256_bytes
from .errors import ModelError
from .model import (
    AffineInBrownian,
    CoefficientPath,
    ControlGrid,
    Deterministic,
    Flat,
    GridPotential,
    LQModel,
    StandardGaussian,
    TimeGrid,
    ValidatedModel,
    validate_model,
)

SEED_ENV = "ENTROPIC_BSDE_SEED"
DEFAULT_N_STEPS = 1000
DEFAULT_N_PATHS = 10_000
DEFAULT_SEED = 42


class ConfigError(ModelError):
    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


@dataclass
class ExperimentConfig:
    model: ValidatedModel
    n_paths: int
    seed: int
    seed_source: str
    run: dict
    output_dir: Path
    config_sha256: str
    raw: dict = field(default_factory=dict)


def _number(x, name: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"expected a number, got {x!r}", name)
    return float(x)


def _matrix(x, rows: int, cols: int, name: str) -> np.ndarray:
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return float(x) * np.eye(rows, cols)
    try:
        arr = np.asarray(x, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("expected a number or a nested list of numbers", name) from None
    if arr.size != rows * cols:
        raise ConfigError(f"expected {rows}x{cols} entries, got shape {arr.shape}", name)
    if arr.ndim == 2 and arr.shape != (rows, cols):
        raise ConfigError(f"expected shape ({rows}, {cols}), got {arr.shape}", name)
    return arr.reshape(rows, cols)


def parse_coefficient(spec, rows: int, cols: int, grid: TimeGrid, name: str) -> CoefficientPath:
    if isinstance(spec, dict):
        if set(spec) != {"knots", "values"}:
            raise ConfigError("time-varying coefficients need exactly 'knots' and 'values'", name)
        knots = spec["knots"]
        values = spec["values"]
        if not isinstance(knots, list) or not isinstance(values, list) or len(knots) != len(values) or not knots:
            raise ConfigError("'knots' and 'values' must be non-empty lists of equal length", name)
        mats = [_matrix(v, rows, cols, f"{name}.values[{i}]") for i, v in enumerate(values)]
        times = [_number(t, f"{name}.knots[{i}]") for i, t in enumerate(knots)]
        try:
            return CoefficientPath.piecewise_linear(times, np.stack(mats), grid)
        except ModelError as e:
            raise ConfigError(str(e), name) from None
    return CoefficientPath.constant(_matrix(spec, rows, cols, name), grid)


def _vector(x, n: int, name: str) -> np.ndarray:
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return np.full(n, float(x))
    try:
        arr = np.asarray(x, dtype=float).ravel()
    except (TypeError, ValueError):
        raise ConfigError("expected a number or list of numbers", name) from None
    if arr.size != n:
        raise ConfigError(f"expected {n} entries, got {arr.size}", name)
    return arr


def _terminal(spec, n: int):
    name = "model.terminal"
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError("expected an object with a 'type'", name)
    kind = spec["type"]
    c = _vector(spec.get("c", 0.0), n, f"{name}.c")
    if kind == "deterministic":
        return Deterministic(c)
    if kind == "affine":
        return AffineInBrownian(c, _vector(spec.get("q", 0.0), n, f"{name}.q"))
    raise ConfigError(f"unknown terminal type {kind!r} (deterministic | affine)", f"{name}.type")


def _reference(spec):
    name = "model.reference"
    if spec is None:
        return StandardGaussian()
    if isinstance(spec, str):
        spec = {"type": spec}
    kind = spec.get("type") if isinstance(spec, dict) else None
    if kind == "standard_gaussian":
        return StandardGaussian()
    if kind == "flat":
        return Flat()
    if kind == "grid_potential":
        try:
            grid = ControlGrid(_number(spec["a_min"], f"{name}.a_min"), _number(spec["a_max"], f"{name}.a_max"), int(spec["n_points"]))
            return GridPotential(grid, np.asarray(spec["values"], dtype=float))
        except KeyError as e:
            raise ConfigError(f"missing field {e.args[0]!r}", name) from None
        except (ModelError, TypeError, ValueError) as e:
            raise ConfigError(str(e), name) from None
    raise ConfigError(f"unknown reference {kind!r} (standard_gaussian | flat | grid_potential)", f"{name}.type")


def parse_json(text: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[: e.pos].encode("utf-8"))
        raise ConfigError(f"malformed JSON at line {e.lineno}, column {e.colno} (byte offset {offset}): {e.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object")
    return data


def build_model(data: dict) -> ValidatedModel:
    spec = data.get("model")
    if not isinstance(spec, dict):
        raise ConfigError("missing or invalid 'model' object", "model")
    g = data.get("grid", {})
    if not isinstance(g, dict):
        raise ConfigError("expected an object", "grid")
    try:
        grid = TimeGrid(_number(g.get("t_end", 1.0), "grid.t_end"), g.get("n_steps", DEFAULT_N_STEPS))
    except ConfigError:
        raise
    except ModelError as e:
        raise ConfigError(str(e), "grid") from None
    n = spec.get("n", 1)
    p = spec.get("p", 1)
    if not (isinstance(n, int) and isinstance(p, int) and n >= 1 and p >= 1):
        raise ConfigError("dimensions n and p must be positive integers", "model.n")
    shapes = {"A": (n, n), "B": (n, p), "C": (n, n), "H": (n, n), "N": (n, n), "R": (p, p)}
    defaults = {"A": 0.0, "B": 1.0, "C": 0.0, "H": 0.0, "N": 0.0, "R": 0.5}
    coeffs = {k: parse_coefficient(spec.get(k, defaults[k]), *shapes[k], grid, f"model.{k}") for k in shapes}
    G = _matrix(spec.get("G", 0.0), n, n, "model.G")
    sigma = _number(spec.get("sigma", 1.0), "model.sigma")
    terminal = _terminal(spec.get("terminal", {"type": "deterministic", "c": 1.0}), n)
    reference = _reference(spec.get("reference"))
    m = LQModel(**coeffs, G=G, sigma=sigma, terminal=terminal, reference=reference, grid=grid)
    try:
        return validate_model(m)
    except ConfigError:
        raise
    except ModelError as e:
        raise ConfigError(str(e), "model") from None


def load_config(path: str | Path, *, seed_override: int | None = None, output_dir: str | Path | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw_bytes = path.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", str(path)) from None
    try:
        text = raw_bytes.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ConfigError(f"config is not UTF-8 (byte offset {e.start})") from None
    data = parse_json(text)
    model = build_model(data)
    run = data.get("run", {})
    if not isinstance(run, dict):
        raise ConfigError("expected an object", "run")
    n_paths = run.get("n_paths", DEFAULT_N_PATHS)
    if not isinstance(n_paths, int) or isinstance(n_paths, bool) or n_paths < 1:
        raise ConfigError("must be a positive integer", "run.n_paths")
    seed, source = run.get("seed", DEFAULT_SEED), "config"
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            seed, source = int(env), "environment"
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if seed_override is not None:
        seed, source = int(seed_override), "command line"
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("must be a nonnegative integer", "run.seed")
    out = Path(output_dir) if output_dir is not None else Path(data.get("output_dir", "output"))
    if not out.is_absolute() and output_dir is None:
        out = path.parent / out
    return ExperimentConfig(model, n_paths, seed, source, run, out, sha256_bytes(raw_bytes), data)
