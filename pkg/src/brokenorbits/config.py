"""Run configuration: flat sectioned key-value files, strictly validated.

Grammar (one setting per line):

    # comment
    [model]
    name = island-magnetic
    strength = 2.0
    [run]
    k = 0.2
    seed = 12345

Values are parsed as int, float, comma-separated number lists, or
semicolon-separated tuples of numbers ("1 0 0.0 2.0; 0 1 0.5 0.0" for
trigonometric terms).  Unknown sections or keys are hard errors: a typo
must never silently change a numerical experiment.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .models import build_model, LagrangianModel

_MODEL_KEYS = {"name", "sides", "v_terms", "a1_terms", "a2_terms",
               "r1", "r2", "big_r", "strength"}
_RUN_KEYS = {"k", "k_grid", "h", "seed", "n_max", "seed_budget", "n_nodes",
             "max_sweeps", "out", "orbit_mode", "perturb", "tau_cap",
             "family_size"}
_TOL_KEYS = {"tol_crit", "tol_rank", "rtol", "atol", "shoot_tol",
             "energy_tol"}
_SECTIONS = {"model": _MODEL_KEYS, "run": _RUN_KEYS, "tolerances": _TOL_KEYS}

DEFAULT_TOLERANCES = {
    "tol_crit": 1e-8,
    "tol_rank": 0.0,       # 0 means the spectral-radius-relative default
    "rtol": 1e-10,
    "atol": 1e-10,
    "shoot_tol": 1e-11,
    "energy_tol": 1e-6,
}


def _parse_scalar(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _parse_value(text: str):
    text = text.strip()
    if ";" in text:
        rows = []
        for chunk in text.split(";"):
            chunk = chunk.strip()
            if chunk:
                rows.append([_parse_scalar(t) for t in chunk.replace(",", " ").split()])
        return rows
    if "," in text:
        return [_parse_scalar(t) for t in text.split(",")]
    return _parse_scalar(text)


def parse_config_text(text: str) -> dict:
    """Sectioned dict from config text; raises ConfigError on unknown keys."""
    out: dict[str, dict] = {name: {} for name in _SECTIONS}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: setting before any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SECTIONS[section]:
            raise ConfigError(
                f"line {lineno}: unknown key '{key}' in [{section}]; "
                f"allowed: {sorted(_SECTIONS[section])}")
        if key in out[section]:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        out[section][key] = _parse_value(value)
    if "name" not in out["model"]:
        raise ConfigError("missing required key: [model] name")
    return out


@dataclass
class RunConfig:
    """Validated experiment configuration plus provenance data."""

    model_name: str
    model_params: dict
    k: float | None
    k_grid: list | None
    h: int                   # 0 means automatic
    seed: int
    n_max: int
    seed_budget: int
    n_nodes: int
    max_sweeps: int
    out_dir: str
    orbit_mode: str          # "auto" | "refine" | "minimize"
    perturb: float
    tau_cap: float
    family_size: int
    tolerances: dict = field(default_factory=dict)
    config_hash: str = ""

    def build_model(self) -> LagrangianModel:
        try:
            return build_model(self.model_name, self.model_params)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad model configuration: {exc}") from exc

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def provenance(self) -> dict:
        from . import __version__

        return {
            "config_hash": self.config_hash,
            "rng_seed": self.seed,
            "tool_version": __version__,
            "tolerances": dict(self.tolerances),
        }


def load_config(path: str, overrides: dict | None = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fp:
        text = fp.read()
    sections = parse_config_text(text)
    model = dict(sections["model"])
    run = dict(sections["run"])
    tol = dict(DEFAULT_TOLERANCES)
    for key, val in sections["tolerances"].items():
        tol[key] = float(val)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        run[key] = val

    name = str(model.pop("name"))
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def _as_float(key, default):
        return float(run[key]) if key in run else default

    def _as_int(key, default):
        return int(run[key]) if key in run else default

    k_grid = run.get("k_grid")
    if k_grid is not None and not isinstance(k_grid, list):
        k_grid = [float(k_grid)]
    return RunConfig(
        model_name=name,
        model_params=model,
        k=_as_float("k", None) if "k" in run else None,
        k_grid=k_grid,
        h=_as_int("h", 0),
        seed=_as_int("seed", 0),
        n_max=_as_int("n_max", 3),
        seed_budget=_as_int("seed_budget", 6),
        n_nodes=_as_int("n_nodes", 16),
        max_sweeps=_as_int("max_sweeps", 200),
        out_dir=str(run.get("out", ".")),
        orbit_mode=str(run.get("orbit_mode", "auto")),
        perturb=_as_float("perturb", 0.01),
        tau_cap=_as_float("tau_cap", 0.0),
        family_size=_as_int("family_size", 2),
        tolerances=tol,
        config_hash=digest,
    )
