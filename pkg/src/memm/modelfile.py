"""YAML model files and the shipped presets.

Affine families (``constant``, ``deterministic``, ``orthogonal``,
``correlated``) share one schema::

    family: correlated
    T: 1.0
    S0: 100.0
    V0: 1.0
    domain: [0.5, 1.5]
    eta_M: [a0, a1]        # a0 + a1 y
    sigma_M: [s0, s1]      # s0 + s1 y
    W_M: [m0, m1]          # x (m0 + m1 y)
    eta_V: [c0, c1]        # c0 + c1 y
    W_V: [v0, v1]          # x (v0 + v1 y)
    atoms: [[x, w], ...]

A scalar stands for ``[value, 0]``.  The ``bns`` family instead has a
``bns`` block (``mu, beta, rho, lam, sigma0_sq`` and optional ``y_max``)
and either ``atoms`` or ``exponential_tail: {a, b, n_atoms}``.  Any family
may carry a ``solver`` block with defaults for ``grid``, ``tol``,
``c_trunc`` and ``max_clamp_fraction``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import ModelFileError
from .model import LevyMeasure, MarketModel
from .special import BnsParams, build_bns_model, exponential_tail_atoms

AFFINE_FAMILIES = ("constant", "deterministic", "orthogonal", "correlated")
FAMILIES = AFFINE_FAMILIES + ("bns",)
_AFFINE_KEYS = {"family", "name", "T", "S0", "V0", "domain", "eta_M", "sigma_M", "W_M",
                "eta_V", "W_V", "atoms", "solver"}
_BNS_KEYS = {"family", "name", "T", "S0", "bns", "atoms", "exponential_tail", "solver"}
_SOLVER_KEYS = {"grid", "tol", "c_trunc", "max_clamp_fraction", "max_sweeps"}


@dataclass
class LoadedModel:
    model: MarketModel
    family: str
    config: dict
    solver: dict = field(default_factory=dict)
    bns: BnsParams | None = None


def preset_names() -> list[str]:
    files = resources.files("memm").joinpath("presets").iterdir()
    return sorted(Path(f.name).stem for f in files if f.name.endswith(".yaml"))


def preset_path(name: str):
    path = resources.files("memm").joinpath("presets", f"{name}.yaml")
    if not path.is_file():
        raise ModelFileError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return path


def read_config(path=None, preset=None) -> tuple[dict, str]:
    """Raw mapping of a model file or a preset, with a label for messages."""
    if (path is None) == (preset is None):
        raise ModelFileError("give exactly one of a model file or a preset")
    if preset is not None:
        return yaml.safe_load(preset_path(preset).read_text()), f"preset {preset}"
    path = Path(path)
    if not path.is_file():
        raise ModelFileError(f"model file not found: {path}")
    try:
        return yaml.safe_load(path.read_text()), str(path)
    except yaml.YAMLError as exc:
        raise ModelFileError(f"{path}: not valid YAML ({exc})") from exc


def load_model_file(path) -> LoadedModel:
    return model_from_dict(*read_config(path=path))


def load_preset(name: str) -> LoadedModel:
    return model_from_dict(*read_config(preset=name))


def _pair(config, key, source, default=None):
    raw = config.get(key, default)
    if raw is None:
        raise ModelFileError(f"{source}: missing '{key}'")
    vals = [raw, 0.0] if np.isscalar(raw) else list(raw)
    if len(vals) != 2:
        raise ModelFileError(f"{source}: '{key}' must be a number or a pair [c0, c1]")
    try:
        return float(vals[0]), float(vals[1])
    except (TypeError, ValueError) as exc:
        raise ModelFileError(f"{source}: '{key}' must be numeric") from exc


def _number(config, key, source, default=None, positive=False):
    raw = config.get(key, default)
    if raw is None:
        raise ModelFileError(f"{source}: missing '{key}'")
    try:
        val = float(raw)
    except (TypeError, ValueError) as exc:
        raise ModelFileError(f"{source}: '{key}' must be numeric, got {raw!r}") from exc
    if positive and not val > 0:
        raise ModelFileError(f"{source}: '{key}' must be positive")
    return val


def _atoms(config, source) -> LevyMeasure:
    raw = config.get("atoms", []) or []
    try:
        pairs = [(float(x), float(w)) for x, w in raw]
        return LevyMeasure.from_atoms(pairs)
    except (TypeError, ValueError) as exc:
        raise ModelFileError(f"{source}: bad 'atoms' ({exc}); expected [[x, w], ...] with w > 0") from exc


def _solver_block(config, source) -> dict:
    solver = dict(config.get("solver") or {})
    unknown = set(solver) - _SOLVER_KEYS
    if unknown:
        raise ModelFileError(f"{source}: unknown solver keys {sorted(unknown)}")
    return solver


def model_from_dict(config, source="model") -> LoadedModel:
    if not isinstance(config, dict):
        raise ModelFileError(f"{source}: top level must be a mapping")
    family = config.get("family")
    if family not in FAMILIES:
        raise ModelFileError(f"{source}: 'family' must be one of {FAMILIES}, got {family!r}")
    allowed = _BNS_KEYS if family == "bns" else _AFFINE_KEYS
    unknown = set(config) - allowed
    if unknown:
        raise ModelFileError(f"{source}: unknown keys {sorted(unknown)} for family {family}")
    solver = _solver_block(config, source)
    if family == "bns":
        return _bns_from_dict(config, source, solver)

    a0, a1 = _pair(config, "eta_M", source)
    s0, s1 = _pair(config, "sigma_M", source)
    m0, m1 = _pair(config, "W_M", source, 0.0)
    c0, c1 = _pair(config, "eta_V", source, 0.0)
    v0, v1 = _pair(config, "W_V", source, 0.0)
    domain = config.get("domain")
    if not (isinstance(domain, (list, tuple)) and len(domain) == 2):
        raise ModelFileError(f"{source}: 'domain' must be [lo, hi]")
    measure = _atoms(config, source)
    if family == "constant" and (a1 or s1 or m1 or c0 or c1 or v0 or v1):
        raise ModelFileError(f"{source}: family 'constant' allows no state dependence or volatility dynamics")
    if family == "deterministic" and (v0 or v1):
        raise ModelFileError(f"{source}: family 'deterministic' needs W_V = 0")
    if family == "orthogonal" and (m0 or m1):
        raise ModelFileError(f"{source}: family 'orthogonal' needs W_M = 0")
    try:
        model = MarketModel(
            eta_M=lambda t, y: a0 + a1 * y,
            sigma_M=lambda t, y: s0 + s1 * y,
            W_M=lambda t, y, x: x * (m0 + m1 * y),
            eta_V=lambda t, y: c0 + c1 * y,
            W_V=lambda t, y, x: x * (v0 + v1 * y),
            domain=(float(domain[0]), float(domain[1])),
            T=_number(config, "T", source, 1.0, positive=True),
            S0=_number(config, "S0", source, 100.0, positive=True),
            V0=_number(config, "V0", source),
            measure=measure,
            name=str(config.get("name", family)),
        )
    except ValueError as exc:
        raise ModelFileError(f"{source}: {exc}") from exc
    return LoadedModel(model, family, config, solver)


def bns_params_from_dict(config, source="model") -> BnsParams:
    block = config.get("bns")
    if not isinstance(block, dict):
        raise ModelFileError(f"{source}: family 'bns' needs a 'bns' parameter block")
    unknown = set(block) - {"mu", "beta", "rho", "lam", "sigma0_sq", "y_max"}
    if unknown:
        raise ModelFileError(f"{source}: unknown bns keys {sorted(unknown)}")
    tail = config.get("exponential_tail")
    tail_rate = tail_scale = None
    if tail is not None:
        if "atoms" in config:
            raise ModelFileError(f"{source}: give either 'atoms' or 'exponential_tail', not both")
        a = _number(tail, "a", source, positive=True)
        b = _number(tail, "b", source, positive=True)
        n = int(_number(tail, "n_atoms", source, 6, positive=True))
        measure = exponential_tail_atoms(a, b, n)
        tail_rate, tail_scale = b, a
    else:
        measure = _atoms(config, source)
    y_max = block.get("y_max")
    try:
        return BnsParams(
            mu=_number(block, "mu", source), beta=_number(block, "beta", source),
            rho=_number(block, "rho", source), lam=_number(block, "lam", source),
            sigma0_sq=_number(block, "sigma0_sq", source), measure=measure,
            y_max=None if y_max is None else float(y_max),
            T=_number(config, "T", source, 1.0, positive=True),
            S0=_number(config, "S0", source, 100.0, positive=True),
            tail_rate=tail_rate, tail_scale=tail_scale,
        )
    except ValueError as exc:
        raise ModelFileError(f"{source}: {exc}") from exc


def _bns_from_dict(config, source, solver) -> LoadedModel:
    params = bns_params_from_dict(config, source)
    model = build_bns_model(params)
    return LoadedModel(model, "bns", config, solver, params)
