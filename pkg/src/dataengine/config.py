"""Pipeline configuration: parsing, defaulting and validation.

The configuration is one YAML (or JSON) document. Relative paths resolve
against the directory holding the config file. Validation collects every
violation before raising, so users can fix a config in one pass.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

import yaml

from .alignment import DEFAULT_ALIGN_THRESHOLD, check_ratios
from .consensus import EnsembleConfig
from .core import ClassQuery
from .errors import ConfigInvalid
from .evaluation import MatchConfig, Strategy
from .ingest import (
    DEFAULT_KEY_PATTERN,
    DEFAULT_KEY_TIME_FORMAT,
    AcquisitionFilter,
    format_timestamp,
    parse_timestamp,
)
from .selection import SelectionPolicy
from .simgen import DetectorNoiseModel, Scenario

STAGES = (
    "simulate",
    "acquire",
    "ingest",
    "consensus",
    "select",
    "align",
    "merge",
    "split",
    "eval",
    "pick-weights",
)

# Fields that change how a run executes but not what it produces.
RUNTIME_FIELDS = ("workers", "output_dir")


@dataclass
class ObjectStoreSource:
    locator: str
    key_pattern: str = DEFAULT_KEY_PATTERN
    time_format: str | None = DEFAULT_KEY_TIME_FORMAT


@dataclass
class CocoSource:
    path: Path
    sidecar: Path


@dataclass
class AlignmentSettings:
    similarity_matrix: Path
    threshold: float = DEFAULT_ALIGN_THRESHOLD
    manifest: Path | None = None


@dataclass
class EvalSettings:
    match: MatchConfig = field(default_factory=MatchConfig)
    ground_truth: Path | None = None
    predictions: Path | None = None
    baseline_predictions: Path | None = None


@dataclass
class CheckpointSettings:
    series: Path
    strategy: Strategy
    baseline_series: Path | None = None
    rolling_window: int = 1
    aliases: dict[str, str] = field(default_factory=dict)
    derive_f1: bool = False


@dataclass
class PipelineConfig:
    output_dir: Path
    workers: int = 1
    stages: tuple[str, ...] = ()
    manifests: list[Path] = field(default_factory=list)
    detections: dict[str, Path] = field(default_factory=dict)
    coco: dict[str, CocoSource] = field(default_factory=dict)
    object_store: ObjectStoreSource | None = None
    acquisition: AcquisitionFilter = field(default_factory=AcquisitionFilter)
    ensemble: EnsembleConfig | None = None
    selection: SelectionPolicy = field(default_factory=SelectionPolicy)
    alignment: AlignmentSettings | None = None
    merge_base: Path | None = None
    split_ratios: tuple[float, float, float] = (0.8, 0.2, 0.0)
    split_seed: int = 0
    split_manifest: Path | None = None
    evaluation: EvalSettings = field(default_factory=EvalSettings)
    checkpoint: CheckpointSettings | None = None
    simulation: Scenario | None = None
    resolved: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        """Hash of the resolved config, ignoring runtime-only fields."""
        body = {k: v for k, v in self.resolved.items() if k not in RUNTIME_FIELDS}
        return hashlib.sha256(json.dumps(body, sort_keys=True, default=str).encode()).hexdigest()[:16]


class _Collector:
    def __init__(self):
        self.violations: list[tuple[str, str]] = []

    def add(self, where: str, msg: str) -> None:
        self.violations.append((where, msg))


def _path(base: Path, value: Any) -> Path:
    p = Path(str(value)).expanduser()
    return p if p.is_absolute() else base / p


def _timestamp(value: Any) -> datetime:
    if isinstance(value, datetime):
        return value if value.tzinfo else value.replace(tzinfo=timezone.utc)
    return parse_timestamp(str(value))


def _section(doc: Mapping, key: str, errs: _Collector) -> dict:
    value = doc.get(key)
    if value is None:
        return {}
    if not isinstance(value, dict):
        errs.add(key, "must be a mapping")
        return {}
    return value


def _existing(base: Path, value: Any, where: str, errs: _Collector) -> Path | None:
    if value is None:
        return None
    p = _path(base, value)
    if not p.exists():
        errs.add(where, f"file not found: {p}")
    return p


def load_config_document(path: str | os.PathLike) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigInvalid([("<file>", str(exc))]) from exc
    except yaml.YAMLError as exc:
        raise ConfigInvalid([("<file>", f"not valid YAML/JSON: {exc}")]) from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigInvalid([("<file>", "top level must be a mapping")])
    return doc


def validate_config(
    path: str | os.PathLike,
    overrides: Mapping[str, Any] | None = None,
) -> PipelineConfig:
    """Load and fully validate a pipeline config file.

    ``overrides`` may set ``workers``, ``output_dir``, ``stages`` or
    ``seed`` (which replaces both the simulation and split seeds).

    Raises:
        ConfigInvalid: listing every violation found.
    """
    doc = load_config_document(path)
    return config_from_dict(doc, Path(path).resolve().parent, overrides)


def config_from_dict(doc: Mapping, base: Path, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    overrides = dict(overrides or {})
    errs = _Collector()
    known = {
        "output_dir", "workers", "stages", "sources", "acquisition", "ensemble", "selection",
        "alignment", "merge", "split", "evaluation", "checkpoint", "simulation",
    }
    for key in doc:
        if key not in known:
            errs.add(str(key), "unknown key")

    out_dir = overrides.get("output_dir") or doc.get("output_dir") or "out"
    cfg = PipelineConfig(output_dir=_path(base, out_dir))

    workers = overrides.get("workers") or doc.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        errs.add("workers", "must be a positive integer")
    else:
        cfg.workers = workers

    stages = overrides.get("stages") or doc.get("stages") or ()
    if isinstance(stages, str):
        stages = [s.strip() for s in stages.split(",") if s.strip()]
    bad = [s for s in stages if s not in STAGES]
    if bad:
        errs.add("stages", f"unknown stages {bad}; choose from {list(STAGES)}")
    cfg.stages = tuple(s for s in STAGES if s in stages)

    seed_override = overrides.get("seed")

    # sources
    src = _section(doc, "sources", errs)
    manifests = src.get("manifests", [])
    if isinstance(manifests, (str, Path)):
        manifests = [manifests]
    cfg.manifests = [p for i, m in enumerate(manifests) if (p := _existing(base, m, f"sources.manifests[{i}]", errs))]
    dets = src.get("detections") or {}
    if not isinstance(dets, dict):
        errs.add("sources.detections", "must map model_id to a detection file")
        dets = {}
    for mid, p in dets.items():
        q = _existing(base, p, f"sources.detections.{mid}", errs)
        if q is not None:
            cfg.detections[str(mid)] = q
    coco = src.get("coco") or {}
    for mid, spec in coco.items():
        if not isinstance(spec, dict) or "path" not in spec or "sidecar" not in spec:
            errs.add(f"sources.coco.{mid}", "needs 'path' and 'sidecar'")
            continue
        p = _existing(base, spec["path"], f"sources.coco.{mid}.path", errs)
        s = _existing(base, spec["sidecar"], f"sources.coco.{mid}.sidecar", errs)
        if p and s:
            cfg.coco[str(mid)] = CocoSource(p, s)
    store = src.get("object_store")
    if store is not None:
        if not isinstance(store, dict) or "locator" not in store:
            errs.add("sources.object_store", "needs a 'locator'")
        else:
            pattern = store.get("key_pattern", DEFAULT_KEY_PATTERN)
            if "(?P<ts>" not in pattern:
                errs.add("sources.object_store.key_pattern", "needs a named group 'ts'")
            locator = str(store["locator"])
            if "://" not in locator:
                locator = str(_path(base, locator))
            cfg.object_store = ObjectStoreSource(locator, pattern, store.get("time_format", DEFAULT_KEY_TIME_FORMAT))

    # acquisition
    acq = _section(doc, "acquisition", errs)
    try:
        cfg.acquisition = AcquisitionFilter(
            start=_timestamp(acq["start"]) if acq.get("start") is not None else None,
            end=_timestamp(acq["end"]) if acq.get("end") is not None else None,
            stride=int(acq.get("stride", 1)),
        )
    except (TypeError, ValueError) as exc:
        errs.add("acquisition", str(exc))

    # ensemble
    ens = _section(doc, "ensemble", errs)
    if ens:
        before = len(errs.violations)
        model_ids = list(ens.get("model_ids") or [])
        quorum = ens.get("quorum")
        coi = list(ens.get("classes_of_interest") or [])
        subset = list(ens.get("filter_subset") or coi)
        if not model_ids:
            errs.add("ensemble.model_ids", "at least one model is required")
        if not isinstance(quorum, int) or isinstance(quorum, bool):
            errs.add("ensemble.quorum", "must be an integer")
        elif model_ids and not 1 <= quorum <= len(model_ids):
            errs.add("ensemble.quorum", f"quorum {quorum} > ensemble size {len(model_ids)}" if quorum > len(model_ids) else "must be >= 1")
        tau = ens.get("iou_threshold", 0.5)
        if not isinstance(tau, (int, float)) or not 0 < tau <= 1:
            errs.add("ensemble.iou_threshold", "must be in (0, 1]")
        if not coi:
            errs.add("ensemble.classes_of_interest", "must be non-empty")
        missing = [c for c in subset if c not in coi]
        if missing:
            errs.add("ensemble.filter_subset", f"not in classes_of_interest: {missing}")
        groups = ens.get("label_groups") or {}
        unmapped = [c for c in subset if groups and c not in groups]
        if unmapped:
            errs.add("ensemble.label_groups", f"no group for {unmapped}")
        if len(errs.violations) == before:
            try:
                cfg.ensemble = EnsembleConfig(
                    model_ids=tuple(str(m) for m in model_ids),
                    quorum=quorum,
                    query=ClassQuery(tuple(coi), tuple(subset)),
                    iou_threshold=float(tau),
                    label_groups={str(k): str(v) for k, v in groups.items()},
                )
            except (ValueError, ConfigInvalid) as exc:
                errs.add("ensemble", str(exc))
        sources_models = set(cfg.detections) | set(cfg.coco)
        extra = sorted(sources_models - set(map(str, model_ids)))
        if model_ids and sources_models and extra:
            errs.add("sources.detections", f"models not in ensemble.model_ids: {extra}")

    sel = _section(doc, "selection", errs)
    try:
        cfg.selection = SelectionPolicy(
            min_instances=int(sel.get("min_instances", 1)),
            crowd_threshold=int(sel.get("crowd_threshold", 40)),
        )
    except (TypeError, ValueError) as exc:
        errs.add("selection", str(exc))

    al = _section(doc, "alignment", errs)
    if al:
        if "similarity_matrix" not in al:
            errs.add("alignment.similarity_matrix", "required")
        else:
            thr = al.get("threshold", DEFAULT_ALIGN_THRESHOLD)
            if not isinstance(thr, (int, float)) or not 0 <= thr <= 1:
                errs.add("alignment.threshold", "must be in [0, 1]")
            cfg.alignment = AlignmentSettings(
                _existing(base, al["similarity_matrix"], "alignment.similarity_matrix", errs),
                float(thr) if isinstance(thr, (int, float)) else DEFAULT_ALIGN_THRESHOLD,
                _existing(base, al.get("manifest"), "alignment.manifest", errs),
            )

    mg = _section(doc, "merge", errs)
    cfg.merge_base = _existing(base, mg.get("base"), "merge.base", errs)

    sp = _section(doc, "split", errs)
    ratios = sp.get("ratios", [0.8, 0.2, 0.0])
    try:
        ratios = tuple(float(r) for r in ratios)
        check_ratios(ratios)
        cfg.split_ratios = ratios
    except ConfigInvalid as exc:
        errs.violations.extend(exc.violations)
    except (TypeError, ValueError):
        errs.add("split.ratios", "must be three numbers")
    cfg.split_seed = int(seed_override if seed_override is not None else sp.get("seed", 0))
    cfg.split_manifest = _existing(base, sp.get("manifest"), "split.manifest", errs)

    ev = _section(doc, "evaluation", errs)
    try:
        cfg.evaluation = EvalSettings(
            match=MatchConfig(
                iou_threshold=float(ev.get("iou_threshold", 0.5)),
                confidence_threshold=float(ev.get("confidence_threshold", 0.5)),
            ),
            ground_truth=_existing(base, ev.get("ground_truth"), "evaluation.ground_truth", errs),
            predictions=_existing(base, ev.get("predictions"), "evaluation.predictions", errs),
            baseline_predictions=_existing(base, ev.get("baseline_predictions"), "evaluation.baseline_predictions", errs),
        )
    except (TypeError, ValueError) as exc:
        errs.add("evaluation", str(exc))

    ck = _section(doc, "checkpoint", errs)
    if ck:
        try:
            strategy = Strategy.parse(str(ck.get("strategy", "best(map)")))
        except ValueError as exc:
            errs.add("checkpoint.strategy", str(exc))
            strategy = None
        if "series" not in ck:
            errs.add("checkpoint.series", "required")
        window = ck.get("rolling_window", 1)
        if not isinstance(window, int) or window < 1:
            errs.add("checkpoint.rolling_window", "must be a positive integer")
        if strategy is not None and "series" in ck:
            cfg.checkpoint = CheckpointSettings(
                series=_existing(base, ck["series"], "checkpoint.series", errs),
                strategy=strategy,
                baseline_series=_existing(base, ck.get("baseline_series"), "checkpoint.baseline_series", errs),
                rolling_window=window if isinstance(window, int) and window >= 1 else 1,
                aliases={str(k): str(v) for k, v in (ck.get("aliases") or {}).items()},
                derive_f1=bool(ck.get("derive_f1", False)),
            )

    sim = _section(doc, "simulation", errs)
    if sim:
        cfg.simulation = _scenario(sim, seed_override, errs)

    _check_stage_inputs(cfg, errs)
    if errs.violations:
        raise ConfigInvalid(errs.violations)
    cfg.resolved = resolved_view(cfg)
    return cfg


def _scenario(sim: Mapping, seed_override, errs: _Collector) -> Scenario | None:
    seed = int(seed_override if seed_override is not None else sim.get("seed", 0))
    models_doc = sim.get("models")
    models: dict[str, DetectorNoiseModel] = {}
    try:
        if isinstance(models_doc, dict):
            for k, (mid, spec) in enumerate(models_doc.items()):
                spec = dict(spec or {})
                spec.setdefault("seed", seed + 1000 * (k + 1))
                models[str(mid)] = _noise(spec)
        elif isinstance(models_doc, int):
            for k in range(models_doc):
                models[f"m{k}"] = _noise({"seed": seed + 1000 * (k + 1), **dict(sim.get("detector") or {})})
        else:
            errs.add("simulation.models", "must be a count or a mapping of model_id to noise settings")
            return None
        kwargs = {
            key: sim[key]
            for key in ("n_frames", "width", "height", "instances_mean", "empty_fraction", "max_instances",
                        "interval_s", "frame_prefix", "name", "max_overlap")
            if key in sim
        }
        if "class_mix" in sim:
            kwargs["class_mix"] = {str(k): float(v) for k, v in sim["class_mix"].items()}
        if "start" in sim:
            kwargs["start"] = _timestamp(sim["start"])
        for key in ("box_width", "box_height"):
            if key in sim:
                kwargs[key] = tuple(float(v) for v in sim[key])
        return Scenario(seed=seed, models=models, **kwargs)
    except (TypeError, ValueError, KeyError) as exc:
        errs.add("simulation", str(exc))
        return None


def _noise(spec: Mapping) -> DetectorNoiseModel:
    kwargs = dict(spec)
    if "conf_model" in kwargs:
        kwargs["conf_model"] = {k: tuple(float(x) for x in v) for k, v in kwargs["conf_model"].items()}
    for key in ("fp_labels",):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    for key in ("fp_box_width", "fp_box_height"):
        if key in kwargs:
            kwargs[key] = tuple(float(v) for v in kwargs[key])
    return DetectorNoiseModel(**kwargs)


def _check_stage_inputs(cfg: PipelineConfig, errs: _Collector) -> None:
    need = {
        "acquire": (cfg.object_store is not None, "sources.object_store"),
        "consensus": (cfg.ensemble is not None, "ensemble"),
        "align": (cfg.alignment is not None, "alignment"),
        "merge": (cfg.merge_base is not None, "merge.base"),
        "pick-weights": (cfg.checkpoint is not None, "checkpoint"),
        "simulate": (cfg.simulation is not None, "simulation"),
    }
    for stage in cfg.stages:
        ok, section = need.get(stage, (True, ""))
        if not ok and not any(f == section or f.startswith(section + ".") for f, _ in errs.violations):
            errs.add(section, f"required by stage {stage!r}")
    if "ingest" in cfg.stages and not cfg.manifests and cfg.simulation is None:
        errs.add("sources.manifests", "stage 'ingest' needs a manifest or a simulation section")


def resolved_view(cfg: PipelineConfig) -> dict:
    """Plain-data echo of the config with all defaults filled in."""

    def conv(v):
        if isinstance(v, Path):
            return str(v)
        if isinstance(v, datetime):
            return format_timestamp(v)
        if isinstance(v, Strategy):
            return str(v)
        if isinstance(v, ClassQuery):
            return {"classes_of_interest": list(v.classes_of_interest), "filter_subset": list(v.filter_subset)}
        if hasattr(v, "__dataclass_fields__"):
            return {k: conv(getattr(v, k)) for k in v.__dataclass_fields__}
        if isinstance(v, Mapping):
            return {str(k): conv(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        return v

    return conv({k: getattr(cfg, k) for k in PipelineConfig.__dataclass_fields__ if k != "resolved"})

