"""End-to-end detection: normalize, profile, segment, clean, decompose, map back."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import csc, profiles, rpca
from .evaluation import evaluate_scores
from .geometry import load_point_cloud, normalize_to_unit_bbox, save_point_cloud

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "PipelineConfig",
    "ConfigError",
    "StageError",
    "DetectionResult",
    "load_config",
    "detect_cloud",
    "detect",
    "ABLATION_GRID",
]

log = logging.getLogger(__name__)

ENV_PREFIX = "PROFILE_RPCA_"
REQUIRED_KEYS = ("c",)

# (enable_opr, enable_cs) rows in the order of the ablation table
ABLATION_GRID = [
    ("none", False, False),
    ("opr_only", True, False),
    ("cs_only", False, True),
    ("full", True, True),
]


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {exc}")


@dataclass(frozen=True)
class PipelineConfig:
    c: int = 2
    m_prime: int = 100
    l_norm: float = 0.8
    p_override: int | None = None
    fuzziness: float = 2.0
    fcm_tol: float = 1e-6
    fcm_max_iter: int = 300
    fcm_restarts: int = 5
    fdo_cutoff: float = 6.0
    boundary_margin: int | None = None
    lambda_mode: str = "inverse_sqrt"
    lambda_value: float | None = None
    lambda_scale: float = 0.5
    rpca_tol: float = 1e-7
    rpca_max_iter: int = 1000
    center: str = "offset"
    smoothing: float = 0.0
    enable_cs: bool = True
    enable_opr: bool = True
    threshold: float | None = None
    seed: int = 0

    def __post_init__(self):
        checks = [
            (self.m_prime >= 2, "m_prime must be >= 2"),
            (0 <= self.l_norm <= 1, "l_norm must lie in [0, 1]"),
            (self.p_override is None or self.p_override >= 2, "p_override must be >= 2"),
            (self.c >= 1, "c must be >= 1"),
            (self.fuzziness > 1, "fuzziness must exceed 1"),
            (self.fcm_restarts >= 1, "fcm_restarts must be >= 1"),
            (self.fdo_cutoff > 0, "fdo_cutoff must be positive"),
            (self.boundary_margin is None or self.boundary_margin >= 1, "boundary_margin must be >= 1"),
            (self.rpca_tol > 0, "rpca_tol must be positive"),
            (self.rpca_max_iter >= 1, "rpca_max_iter must be >= 1"),
            (self.smoothing >= 0, "smoothing must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.rpca_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def rpca_config(self):
        return rpca.RpcaConfig(self.lambda_mode, self.lambda_value, self.lambda_scale, self.rpca_tol,
                               self.rpca_max_iter, center=self.center)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def as_dict(self):
        return dataclasses.asdict(self)


def _coerce(name, ftype, raw):
    text = str(raw).strip()
    optional = "None" in ftype
    if optional and text.lower() in ("", "none", "null"):
        return None
    try:
        if "bool" in ftype:
            if isinstance(raw, bool):
                return raw
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if "int" in ftype:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(text)
            return int(float(text)) if isinstance(raw, str) else int(raw)
        if "float" in ftype:
            return float(raw)
        return text
    except (TypeError, ValueError):
        raise ConfigError(f"config key '{name}': cannot interpret {raw!r} as {ftype}") from None


def load_config(path=None, overrides=None, environ=None, required=REQUIRED_KEYS):
    """Build a PipelineConfig from a flat TOML file, ``PROFILE_RPCA_*`` env vars and overrides.

    Later sources win: file, then environment, then ``overrides``.
    """
    types = {f.name: str(f.type) for f in dataclasses.fields(PipelineConfig)}
    values = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config {path}: {exc}") from None
        for k, v in data.items():
            if isinstance(v, dict):
                raise ConfigError(f"config {path}: key '{k}' is a table; the config must be flat")
            values[k] = v
        missing = [k for k in required if k not in values]
        if missing:
            raise ConfigError(f"config {path}: missing required field '{missing[0]}'")
    environ = os.environ if environ is None else environ
    for k in types:
        env = ENV_PREFIX + k.upper()
        if env in environ:
            values[k] = environ[env]
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(values) - set(types))
    if unknown:
        raise ConfigError(f"unknown config key '{unknown[0]}'")
    kwargs = {k: _coerce(k, types[k], v) for k, v in values.items()}
    return PipelineConfig(**kwargs)


@dataclass(eq=False)
class DetectionResult:
    cloud: object  # input cloud (original units) with scores
    normalized: object
    matrix: profiles.ProfileMatrix
    components: csc.ComponentSet
    decomposition: rpca.DecompositionResult
    report: dict = field(default_factory=dict)
    metrics: dict | None = None

    @property
    def scores(self):
        return self.cloud.scores


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def detect_cloud(cloud, config=PipelineConfig()):
    """Score every point of ``cloud``; NaN marks points that were not evaluated."""
    timings = {}
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        norm, scale, offset = _stage("normalize", normalize_to_unit_bbox, cloud)
        matrix = _stage("profiles", profiles.build_profile_matrix, norm, config.m_prime, config.l_norm,
                        config.p_override, config.smoothing)
        timings["profiles"] = time.perf_counter() - t0

        fcm = None
        if config.enable_cs and config.c > 1:
            fcm = _stage("clustering", csc.cluster_columns, matrix, config.c, config.fuzziness,
                         config.fcm_tol, config.fcm_max_iter, config.seed, n_init=config.fcm_restarts)
            comps = _stage("segmentation", csc.segment_components, matrix, fcm)
        else:
            comps = csc.single_component(matrix)
        if config.enable_opr:
            comps = _stage("cleaning", csc.clean_components, comps, config.boundary_margin,
                           config.fdo_cutoff)
        timings["csc"] = time.perf_counter() - t0 - timings["profiles"]

        dec = _stage("rpca", rpca.decompose_components, comps, config.rpca_config())
        scored = _stage("mapping", rpca.map_scores_to_cloud, dec, matrix, norm)
        timings["total"] = time.perf_counter() - t0

    evaluated = ~np.isnan(scored.scores)
    report = {
        "config": config.as_dict(),
        "points": len(cloud),
        "normalization": {"scale": scale, "offset": offset.tolist()},
        "profiles": matrix.report,
        "components": [
            {"label": k.label, "columns": k.columns.tolist(), "removed": k.removed.tolist()}
            for k in comps.components
        ],
        "boundaries": comps.boundaries,
        "fcm": None if fcm is None else {
            "iterations": fcm.n_iter, "repairs": fcm.repairs,
            "objective_final": float(fcm.objective[-1]) if len(fcm.objective) else None,
            "hard_labels": fcm.hard_labels.tolist(),
        },
        "rpca": dec.report(),
        "coverage": float(evaluated.mean()),
        "unevaluated_points": int((~evaluated).sum()),
        "warnings": [str(w.message) for w in caught],
        "timings": timings,
    }
    for w in caught:
        log.warning("%s", w.message)
    out = cloud.with_scores(scored.scores)
    result = DetectionResult(out, norm, matrix, comps, dec, report)
    if cloud.labels is not None and cloud.labels.any():
        result.metrics = evaluate_scores(out.scores, cloud.labels, config.threshold)
        report["metrics"] = result.metrics
    return result


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def detect(input_path, config=PipelineConfig(), out_dir=".", fmt=None, input_format=None):
    """Run ``detect_cloud`` on a file and write the scored cloud and run report.

    Writes ``<stem>.scores.<ext>`` and ``<stem>.report.json`` into ``out_dir``.
    """
    cloud = load_point_cloud(input_path, input_format)
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(str(input_path)))[0]
    report_path = os.path.join(out_dir, f"{stem}.report.json")
    try:
        result = detect_cloud(cloud, config)
    except StageError as exc:
        with open(report_path, "w") as fh:
            json.dump({"input": str(input_path), "failed_stage": exc.stage, "error": str(exc),
                       "config": config.as_dict()}, fh, indent=2)
        raise
    ext = fmt or os.path.splitext(str(input_path))[1].lstrip(".") or "xyz"
    score_path = os.path.join(out_dir, f"{stem}.scores.{ext}")
    save_point_cloud(result.cloud, score_path, ext)
    report = dict(result.report, input=str(input_path), scores=score_path)
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2, default=_json_default)
    result.report = report
    return result
