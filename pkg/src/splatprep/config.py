"""Pipeline configuration: a flat YAML mapping with typed, range-checked keys.

Relative paths are resolved against the directory holding the config
file. Unknown keys are rejected with a close-match suggestion.
"""

from __future__ import annotations

import difflib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from splatprep.errors import ConfigError

STAGES = ("filter", "cluster", "fuse", "densify", "evaluate")
PATH_KEYS = ("model_dir", "mask_dir", "embedding_dir", "image_dir", "reference_ply", "output_dir")


@dataclass(frozen=True)
class PipelineConfig:
    model_dir: Path | None = None
    mask_dir: Path | None = None
    embedding_dir: Path | None = None
    image_dir: Path | None = None
    reference_ply: Path | None = None
    output_dir: Path = Path("splatprep_out")
    scene_name: str = "scene"
    seed: int = 0
    threads: int = 1
    stages: tuple[str, ...] = STAGES
    # filter
    hull_threshold: float = 0.05
    min_track: int = 3
    error_quantile: float = 0.9
    include_removed_ids: bool = True
    # cluster
    k_min: int = 3
    alpha: float = 0.5
    beta: float = 0.5
    forward_convention: str = "neg-z"
    # fuse
    overlap_threshold: float = 0.5
    strict_visibility: bool = False
    projection_forward: str = "pos-z"
    y_flip: bool = False
    # densify
    gamma: float = 0.1
    n_min: int = 10
    min_existing: int = 5
    mode: str = "isotropic"
    # evaluate
    lambda_dino: float = 0.05
    lambda_dssim: float = 0.2
    dino_sign: str = "dissimilarity"
    # key -> 1-based line in the source file, for diagnostics
    lines: dict = field(default_factory=dict, compare=False, repr=False)

    def parameters(self) -> dict:
        """Every setting as plain JSON-ready values (paths as strings)."""
        out = {}
        for f in fields(self):
            if f.name == "lines":
                continue
            value = getattr(self, f.name)
            if isinstance(value, Path):
                value = str(value)
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out


KNOWN_KEYS = tuple(f.name for f in fields(PipelineConfig) if f.name != "lines")
_CHOICES = {
    "forward_convention": ("neg-z", "pos-z"),
    "projection_forward": ("neg-z", "pos-z"),
    "mode": ("isotropic", "covariance"),
    "dino_sign": ("dissimilarity", "paper_literal"),
}
# key -> (lower, upper, lower inclusive, upper inclusive)
_RANGES = {
    "threads": (1, math.inf, True, True),
    "hull_threshold": (0, math.inf, True, True),
    "min_track": (0, math.inf, True, True),
    "error_quantile": (0, 1, False, True),
    "k_min": (1, math.inf, True, True),
    "alpha": (0, math.inf, True, True),
    "beta": (0, math.inf, True, True),
    "overlap_threshold": (0, 1, False, True),
    "gamma": (0, math.inf, False, True),
    "n_min": (0, math.inf, True, True),
    "min_existing": (5, math.inf, True, True),
    "lambda_dino": (0, math.inf, True, True),
    "lambda_dssim": (0, 1, True, True),
}
_INTS = {"seed", "threads", "min_track", "k_min", "n_min", "min_existing"}
_FLOATS = {"hull_threshold", "error_quantile", "alpha", "beta", "overlap_threshold", "gamma",
           "lambda_dino", "lambda_dssim"}
_BOOLS = {"include_removed_ids", "strict_visibility", "y_flip"}


def _where(lines: dict, key: str) -> str:
    return f"line {lines[key]}: " if key in lines else ""


def _coerce(key: str, value, lines: dict) -> tuple[object, str | None]:
    at = _where(lines, key)
    if key in PATH_KEYS:
        if value is None:
            return None, None
        if not isinstance(value, str) or not value:
            return None, f"{at}{key}: expected a path string, got {value!r}"
        return Path(value), None
    if key in _BOOLS:
        if not isinstance(value, bool):
            return None, f"{at}{key}: expected true or false, got {value!r}"
        return value, None
    if key in _INTS:
        if isinstance(value, bool) or not isinstance(value, int):
            return None, f"{at}{key}: expected an integer, got {value!r}"
        return value, None
    if key in _FLOATS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return None, f"{at}{key}: expected a number, got {value!r}"
        return float(value), None
    if key == "stages":
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, (list, tuple)) or not all(isinstance(s, str) for s in value):
            return None, f"{at}stages: expected a list of stage names"
        return tuple(value), None
    if not isinstance(value, str):
        return None, f"{at}{key}: expected a string, got {value!r}"
    return value, None


def _check_ranges(cfg: PipelineConfig) -> list[str]:
    problems = []
    lines = cfg.lines
    for key, (lo, hi, lo_inc, hi_inc) in _RANGES.items():
        v = getattr(cfg, key)
        if isinstance(v, float) and math.isnan(v):
            problems.append(f"{_where(lines, key)}{key}: must not be NaN")
            continue
        ok_lo = v >= lo if lo_inc else v > lo
        ok_hi = v <= hi if hi_inc else v < hi
        if not (ok_lo and ok_hi):
            interval = f"{'[' if lo_inc else '('}{lo}, {hi}{']' if hi_inc else ')'}"
            problems.append(f"{_where(lines, key)}{key}: {v} is outside {interval}")
    for key, allowed in _CHOICES.items():
        if getattr(cfg, key) not in allowed:
            problems.append(f"{_where(lines, key)}{key}: {getattr(cfg, key)!r} is not one of {', '.join(allowed)}")
    bad = [s for s in cfg.stages if s not in STAGES]
    if bad:
        problems.append(f"{_where(lines, 'stages')}stages: unknown stage(s) {', '.join(bad)}; "
                        f"choose from {', '.join(STAGES)}")
    elif len(set(cfg.stages)) != len(cfg.stages):
        problems.append(f"{_where(lines, 'stages')}stages: duplicate stage names")
    elif not cfg.stages:
        problems.append(f"{_where(lines, 'stages')}stages: at least one stage is required")
    return problems


def _suggest(key: str) -> str:
    match = difflib.get_close_matches(key, KNOWN_KEYS, n=1, cutoff=0.6)
    return f"; did you mean {match[0]!r}?" if match else ""


def parse_config(text: str, base_dir: Path | None = None, source: str = "<config>") -> PipelineConfig:
    """Parse YAML text into a validated config (paths are not checked here)."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{source}: {where}invalid YAML ({getattr(exc, 'problem', exc)})") from None
    if data is None:
        data, root = {}, None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping of key: value")

    lines = {}
    if root is not None:
        for key_node, _ in root.value:
            lines[str(key_node.value)] = key_node.start_mark.line + 1

    problems, values = [], {}
    for key, raw in data.items():
        key = str(key)
        if key not in KNOWN_KEYS:
            problems.append(f"{_where(lines, key)}unknown key {key!r}{_suggest(key)}")
            continue
        value, err = _coerce(key, raw, lines)
        if err:
            problems.append(err)
            continue
        if key in PATH_KEYS and value is not None and base_dir is not None and not value.is_absolute():
            value = base_dir / value
        values[key] = value
    # keys that failed coercion fall back to defaults, so every problem is reported in one pass
    cfg = PipelineConfig(**values, lines=lines)
    problems += _check_ranges(cfg)
    if problems:
        raise ConfigError([f"{source}: {p}" for p in problems])
    return cfg


def validate_config(path) -> PipelineConfig:
    """Load and validate a config file; an empty file yields all defaults."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path.parent, path.name)


load_config = validate_config


def override(cfg: PipelineConfig, **changes) -> PipelineConfig:
    """Apply non-None overrides (e.g. from CLI flags) and re-check ranges."""
    changes = {k: v for k, v in changes.items() if v is not None}
    unknown = set(changes) - set(KNOWN_KEYS)
    if unknown:
        raise ConfigError([f"unknown setting {k!r}{_suggest(k)}" for k in sorted(unknown)])
    for key in PATH_KEYS:
        if key in changes:
            changes[key] = Path(changes[key])
    if "stages" in changes:
        changes["stages"] = tuple(changes["stages"])
    lines = {k: v for k, v in cfg.lines.items() if k not in changes}
    cfg = replace(cfg, **changes, lines=lines)
    problems = _check_ranges(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def check_paths(cfg: PipelineConfig) -> None:
    """Verify that every input a requested stage needs exists; run before any work."""
    problems = []
    needs_model = {"filter", "cluster", "fuse"} & set(cfg.stages)
    if needs_model:
        if cfg.model_dir is None:
            problems.append(f"model_dir is required for stage(s) {', '.join(sorted(needs_model))}")
        elif not cfg.model_dir.is_dir():
            problems.append(f"{_where(cfg.lines, 'model_dir')}model_dir {cfg.model_dir} does not exist")
    if "fuse" in cfg.stages:
        if cfg.mask_dir is None:
            problems.append("mask_dir is required for stage fuse")
        elif not cfg.mask_dir.is_dir():
            problems.append(f"{_where(cfg.lines, 'mask_dir')}mask_dir {cfg.mask_dir} does not exist")
    for key in ("embedding_dir", "image_dir"):
        p = getattr(cfg, key)
        if p is not None and not p.is_dir():
            problems.append(f"{_where(cfg.lines, key)}{key} {p} does not exist")
    if cfg.reference_ply is not None and not cfg.reference_ply.is_file():
        problems.append(f"{_where(cfg.lines, 'reference_ply')}reference_ply {cfg.reference_ply} does not exist")
    if problems:
        raise ConfigError(problems)
