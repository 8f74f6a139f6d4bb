"""End-to-end orchestration: stages, worker pool and run records.

Stages exchange data only through files under the output directory, so
any stage can be re-run on its own once its inputs exist. Per-frame work
is sharded into contiguous chunks, processed by a process pool and merged
back in frame order; outputs therefore do not depend on the worker count.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import alignment as al
from .config import STAGES, PipelineConfig
from .consensus import EnsembleConfig, FrameConsensus, run_frame
from .core import DatasetManifest, Detection
from .errors import DataEngineError, IngestError, StageError
from .evaluation import (
    EpochSeries,
    FrameEval,
    MatchConfig,
    change_report,
    combine,
    compare_checkpoints,
    evaluate_frame,
    load_epoch_series,
    rolling_stats,
    select_checkpoint,
)
from .ingest import (
    DetectionSet,
    atomic_write_lines,
    atomic_write_text,
    detection_to_record,
    dumps,
    filter_by_time,
    list_remote_objects,
    load_coco_results,
    load_coco_sidecar,
    load_detections,
    load_manifest,
    save_detections,
    save_manifest,
)
from .selection import select_frames, tag_crowds, with_crowd_stats
from .simgen import Scenario, simulate_range

logger = logging.getLogger(__name__)

RUN_RECORD = "run_record.json"
REPORT = "report.txt"

# Fixed file layout under the output directory.
PATHS = {
    "sim_manifest": "simulate/manifest.jsonl",
    "keys": "acquire/keys.txt",
    "manifest": "ingest/manifest.jsonl",
    "detections": "ingest/detections.jsonl",
    "clusters": "consensus/clusters.jsonl",
    "consensus": "consensus/detections.jsonl",
    "consensus_stats": "consensus/stats.json",
    "selection_report": "select/report.json",
    "selected": "select/selected.txt",
    "selected_manifest": "select/selected_manifest.jsonl",
    "selection_summary": "select/summary.txt",
    "aligned": "align/manifest.jsonl",
    "alignment": "align/alignment.json",
    "merged": "merge/manifest.jsonl",
    "train": "split/train.jsonl",
    "val": "split/val.jsonl",
    "test": "split/test.jsonl",
    "metrics": "eval/metrics.json",
    "metrics_table": "eval/metrics.txt",
    "baseline_metrics": "eval/baseline_metrics.json",
    "change": "eval/change.json",
    "checkpoint": "pick-weights/checkpoint.json",
    "rolling": "pick-weights/rolling.csv",
}


def sim_detections_path(model_id: str) -> str:
    return f"simulate/detections-{model_id}.jsonl"


# ---------------------------------------------------------------------------
# worker pool


def chunked(items: Sequence, n_chunks: int) -> list[Sequence]:
    """Split ``items`` into at most ``n_chunks`` contiguous, nearly equal chunks."""
    n = len(items)
    if n == 0:
        return []
    n_chunks = max(1, min(n_chunks, n))
    size, extra = divmod(n, n_chunks)
    out, start = [], 0
    for k in range(n_chunks):
        end = start + size + (1 if k < extra else 0)
        out.append(items[start:end])
        start = end
    return out


def parallel_map(fn: Callable[[Sequence], list], items: Sequence, workers: int, chunks_per_worker: int = 4) -> list:
    """Apply ``fn`` to contiguous chunks of ``items`` and concatenate results in order.

    ``fn`` maps a chunk to a list with one result per item. Workers only see
    immutable chunk copies; merging happens here, single-threaded.
    """
    if not items:
        return []
    if workers <= 1:
        return list(fn(items))
    chunks = chunked(items, workers * chunks_per_worker)
    out: list = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(fn, chunks):
            out.extend(part)
    return out


def _simulate_chunk(scenario: Scenario, indices: Sequence[int]):
    return simulate_range(scenario, indices)


def _consensus_chunk(config: EnsembleConfig, items: Sequence[tuple[str, list[Detection]]]) -> list[FrameConsensus]:
    return [run_frame(fid, dets, config) for fid, dets in items]


def _eval_chunk(cfg: MatchConfig, items) -> list[FrameEval]:
    return [evaluate_frame(preds, gt, cfg) for preds, gt in items]


def run_consensus(
    manifest: DatasetManifest,
    detections: dict[str, list[Detection]],
    config: EnsembleConfig,
    workers: int = 1,
) -> list[FrameConsensus]:
    """Consensus for every manifest frame, in manifest order."""
    items = [(f.frame_id, detections.get(f.frame_id, [])) for f in manifest.frames]
    return parallel_map(partial(_consensus_chunk, config), items, workers)


def run_simulation(scenario: Scenario, workers: int = 1):
    return parallel_map(partial(_simulate_chunk, scenario), list(range(scenario.n_frames)), workers)


# ---------------------------------------------------------------------------
# run records


@dataclass
class StageRecord:
    seconds: float = 0.0
    counts: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    throughput_fps: float | None = None


@dataclass
class RunRecord:
    config_hash: str
    stages: dict[str, StageRecord] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def reports(self) -> dict[str, str]:
        out = {}
        for name, st in self.stages.items():
            for key, rel in st.outputs.items():
                out[f"{name}.{key}"] = rel
        return out

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "stages": {
                k: {"seconds": v.seconds, "counts": v.counts, "outputs": v.outputs, "throughput_fps": v.throughput_fps}
                for k, v in self.stages.items()
            },
            "warnings": self.warnings,
            "reports": self.reports,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> RunRecord:
        stages = {k: StageRecord(v["seconds"], v["counts"], v["outputs"], v.get("throughput_fps")) for k, v in doc["stages"].items()}
        return cls(doc["config_hash"], stages, list(doc.get("warnings", [])), doc.get("config", {}))

    def save(self, path: str | os.PathLike) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> RunRecord:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# stages


class _Context:
    def __init__(self, cfg: PipelineConfig, record: RunRecord):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.record = record

    def path(self, key: str) -> Path:
        return self.out / PATHS[key]

    def require(self, path: Path, what: str) -> Path:
        if not path.exists():
            raise IngestError(f"missing {what}: {path}")
        return path

    def warn(self, stage: str, msg: str) -> None:
        logger.warning("[%s] %s", stage, msg)
        self.record.warnings.append(f"[{stage}] {msg}")

    def rel(self, key: str) -> str:
        return PATHS[key]


def _load_manifest_input(ctx: _Context, path: Path, what: str) -> DatasetManifest:
    return load_manifest(ctx.require(path, what))


def _load_detection_input(ctx: _Context, path: Path, manifest: DatasetManifest, what: str, model_id=None) -> DetectionSet:
    return load_detections(ctx.require(path, what), manifest, model_id)


def stage_simulate(ctx: _Context, st: StageRecord) -> None:
    scenario = ctx.cfg.simulation
    results = run_simulation(scenario, ctx.cfg.workers)
    manifest = DatasetManifest(
        name=scenario.name,
        frames=tuple(f for f, _ in results),
        class_set=tuple(scenario.class_mix),
        provenance=f"simgen(seed={scenario.seed})",
    )
    save_manifest(manifest, ctx.path("sim_manifest"))
    st.outputs["manifest"] = ctx.rel("sim_manifest")
    n_dets = 0
    for model_id in scenario.models:
        dets = [d for _, ds in results for d in ds if d.model_id == model_id]
        n_dets += len(dets)
        rel = sim_detections_path(model_id)
        save_detections(dets, ctx.out / rel)
        st.outputs[f"detections.{model_id}"] = rel
    st.counts.update(frames=len(manifest), instances=manifest.instance_count, detections=n_dets)


def stage_acquire(ctx: _Context, st: StageRecord) -> None:
    src = ctx.cfg.object_store
    listing = list_remote_objects(src.locator, ctx.cfg.acquisition, src.key_pattern, src.time_format)
    atomic_write_lines(ctx.path("keys"), listing.keys)
    if listing.unparseable:
        ctx.warn("acquire", f"{listing.unparseable} keys without a parseable timestamp skipped")
    st.counts.update(keys=len(listing.keys), unparseable=listing.unparseable)
    st.outputs["keys"] = ctx.rel("keys")


def stage_ingest(ctx: _Context, st: StageRecord) -> None:
    cfg = ctx.cfg
    if cfg.manifests:
        manifests = [_load_manifest_input(ctx, p, "manifest") for p in cfg.manifests]
        manifest = manifests[0]
        for m in manifests[1:]:
            manifest = al.merge_datasets(manifest, m)
    else:
        manifest = _load_manifest_input(ctx, ctx.path("sim_manifest"), "simulated manifest (run 'simulate' first)")
    before = len(manifest)
    manifest = filter_by_time(manifest, cfg.acquisition)

    sets: dict[str, DetectionSet] = {}
    for mid, p in cfg.detections.items():
        sets[mid] = _load_detection_input(ctx, p, manifest, f"detections for {mid}", mid)
    for mid, src in cfg.coco.items():
        categories, image_ids = load_coco_sidecar(ctx.require(src.sidecar, "COCO sidecar"))
        sets[mid] = load_coco_results(ctx.require(src.path, f"COCO results for {mid}"), manifest, mid, categories, image_ids)
    if not sets and not cfg.manifests and cfg.simulation is not None:
        for mid in cfg.simulation.models:
            sets[mid] = _load_detection_input(ctx, ctx.out / sim_detections_path(mid), manifest, f"simulated detections for {mid}", mid)

    model_order = list(cfg.ensemble.model_ids) if cfg.ensemble else []
    model_order += [m for m in sets if m not in model_order]
    merged = DetectionSet()
    for mid in model_order:
        if mid in sets:
            merged = merged.merge(sets[mid])
    ordered = [d for f in manifest.frames for d in merged.by_frame.get(f.frame_id, [])]
    if merged.orphaned:
        ctx.warn("ingest", f"{merged.orphaned} detection records reference frames outside the manifest")
    if merged.degenerate:
        ctx.warn("ingest", f"{merged.degenerate} degenerate detection boxes dropped")

    save_manifest(manifest, ctx.path("manifest"))
    save_detections(ordered, ctx.path("detections"))
    st.outputs.update(manifest=ctx.rel("manifest"), detections=ctx.rel("detections"))
    st.counts.update(
        frames_in=before,
        frames=len(manifest),
        detections=len(ordered),
        orphaned=merged.orphaned,
        degenerate=merged.degenerate,
    )


def _ingested(ctx: _Context) -> tuple[DatasetManifest, dict[str, list[Detection]]]:
    manifest = _load_manifest_input(ctx, ctx.path("manifest"), "ingested manifest (run 'ingest' first)")
    dets = _load_detection_input(ctx, ctx.path("detections"), manifest, "ingested detections")
    return manifest, dets.by_frame


def _cluster_record(c) -> dict:
    return {
        "anchor": detection_to_record(c.anchor),
        "group": c.group,
        "passed": c.passed,
        "supporters": {mid: {"iou": v, "confidence": d.confidence} for mid, (d, v) in c.supporters.items()},
    }


def stage_consensus(ctx: _Context, st: StageRecord) -> None:
    manifest, by_frame = _ingested(ctx)
    results = run_consensus(manifest, by_frame, ctx.cfg.ensemble, ctx.cfg.workers)
    cluster_lines, anchors = [], []
    n_clusters = n_passed = n_voted = 0
    support_hist: dict[str, int] = {}
    for fc in results:
        cluster_lines.append(dumps({"frame_id": fc.frame_id, "clusters": [_cluster_record(c) for c in fc.clusters]}))
        anchors.extend(fc.detections)
        n_clusters += len(fc.clusters)
        n_passed += fc.count
        for c in fc.clusters:
            n_voted += c.support
            support_hist[str(c.support)] = support_hist.get(str(c.support), 0) + 1
    atomic_write_lines(ctx.path("clusters"), cluster_lines)
    save_detections(anchors, ctx.path("consensus"))
    n_in = sum(len(v) for v in by_frame.values())
    stats = {
        "frames": len(manifest),
        "input_detections": n_in,
        "query_detections": n_voted,
        "clusters": n_clusters,
        "passed_clusters": n_passed,
        "rejected_clusters": n_clusters - n_passed,
        "support_histogram": dict(sorted(support_hist.items(), key=lambda kv: int(kv[0]))),
        "quorum": ctx.cfg.ensemble.quorum,
        "n_models": ctx.cfg.ensemble.n_models,
        "iou_threshold": ctx.cfg.ensemble.iou_threshold,
    }
    atomic_write_text(ctx.path("consensus_stats"), json.dumps(stats, indent=2, sort_keys=True) + "\n")
    st.outputs.update(clusters=ctx.rel("clusters"), detections=ctx.rel("consensus"), stats=ctx.rel("consensus_stats"))
    st.counts.update(frames=len(manifest), input_detections=n_in, clusters=n_clusters, consensus_detections=n_passed)


def stage_select(ctx: _Context, st: StageRecord) -> None:
    manifest = _load_manifest_input(ctx, ctx.path("manifest"), "ingested manifest (run 'ingest' first)")
    dets = _load_detection_input(ctx, ctx.path("consensus"), manifest, "consensus detections (run 'consensus' first)")
    counts = {f.frame_id: len(dets.by_frame.get(f.frame_id, ())) for f in manifest.frames}
    selected, report = select_frames(counts, ctx.cfg.selection)
    frames = manifest.by_id()
    tagged, crowd_frames, crowd_instances = tag_crowds([frames[f] for f in selected], counts, ctx.cfg.selection)
    report = with_crowd_stats(report, crowd_frames, crowd_instances)
    selected_manifest = DatasetManifest(
        name=f"{manifest.name}-selected",
        frames=tuple(tagged),
        class_set=manifest.class_set,
        provenance=f"select(min_instances={ctx.cfg.selection.min_instances}) of {manifest.name}",
    )
    atomic_write_text(ctx.path("selection_report"), json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    atomic_write_lines(ctx.path("selected"), selected)
    save_manifest(selected_manifest, ctx.path("selected_manifest"))
    atomic_write_text(ctx.path("selection_summary"), report.summary() + "\n")
    st.outputs.update(
        report=ctx.rel("selection_report"),
        selected=ctx.rel("selected"),
        manifest=ctx.rel("selected_manifest"),
        summary=ctx.rel("selection_summary"),
    )
    st.counts.update(frames=report.total_frames, selected=report.frames_selected, crowd_frames=crowd_frames)


def stage_align(ctx: _Context, st: StageRecord) -> None:
    settings = ctx.cfg.alignment
    source = settings.manifest or ctx.path("manifest")
    manifest = _load_manifest_input(ctx, source, "manifest to align")
    z = al.load_similarity_matrix(ctx.require(settings.similarity_matrix, "similarity matrix"))
    amap = al.build_alignment(z, settings.threshold)
    aligned = al.apply_alignment(manifest, amap)
    save_manifest(aligned, ctx.path("aligned"))
    doc = {"threshold": amap.threshold, "mapping": {k: v for k, v in amap.mapping.items()}}
    atomic_write_text(ctx.path("alignment"), json.dumps(doc, indent=2, sort_keys=True) + "\n")
    st.outputs.update(manifest=ctx.rel("aligned"), alignment=ctx.rel("alignment"))
    st.counts.update(
        frames=len(aligned),
        instances=aligned.instance_count,
        mapped=sum(1 for v in amap.mapping.values() if v is not None),
        retained=sum(1 for v in amap.mapping.values() if v is None),
    )


def stage_merge(ctx: _Context, st: StageRecord) -> None:
    base = _load_manifest_input(ctx, ctx.cfg.merge_base, "merge base manifest")
    addition_path = ctx.path("aligned") if ctx.cfg.alignment else ctx.path("manifest")
    addition = _load_manifest_input(ctx, addition_path, "manifest to merge")
    merged = al.merge_datasets(base, addition)
    save_manifest(merged, ctx.path("merged"))
    st.outputs["manifest"] = ctx.rel("merged")
    st.counts.update(
        frames=len(merged),
        base_instances=base.instance_count,
        added_instances=addition.instance_count,
        instances=merged.instance_count,
    )


def stage_split(ctx: _Context, st: StageRecord) -> None:
    cfg = ctx.cfg
    if cfg.split_manifest is not None:
        source = cfg.split_manifest
    elif cfg.merge_base is not None:
        source = ctx.path("merged")
    elif cfg.alignment is not None:
        source = ctx.path("aligned")
    else:
        source = ctx.path("manifest")
    manifest = _load_manifest_input(ctx, source, "manifest to split")
    parts = al.split_dataset(manifest, cfg.split_ratios, cfg.split_seed)
    for key, part in zip(("train", "val", "test"), parts):
        save_manifest(part, ctx.path(key))
        st.outputs[key] = ctx.rel(key)
        st.counts[key] = len(part)


def _evaluate_file(ctx: _Context, preds_path: Path, gt: DatasetManifest, what: str):
    preds = _load_detection_input(ctx, preds_path, gt, what, model_id="model")
    items = [(preds.by_frame.get(f.frame_id, []), f.ground_truth) for f in gt.frames if f.ground_truth is not None]
    evals = parallel_map(partial(_eval_chunk, ctx.cfg.evaluation.match), items, ctx.cfg.workers)
    return combine(evals), preds


def stage_eval(ctx: _Context, st: StageRecord) -> None:
    settings = ctx.cfg.evaluation
    gt = _load_manifest_input(ctx, settings.ground_truth or ctx.path("manifest"), "ground-truth manifest")
    preds_path = settings.predictions or ctx.path("consensus")
    report, preds = _evaluate_file(ctx, preds_path, gt, "predictions")
    outputs = {"metrics": ctx.rel("metrics"), "table": ctx.rel("metrics_table")}
    texts = [(ctx.path("metrics"), json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")]
    table = report.render()
    if settings.baseline_predictions is not None:
        base, _ = _evaluate_file(ctx, settings.baseline_predictions, gt, "baseline predictions")
        change = change_report(base, report, skip_zero=True, label="candidate vs baseline")
        for m in change.undefined:
            ctx.warn("eval", f"baseline {m} is zero; percent change undefined")
        texts.append((ctx.path("baseline_metrics"), json.dumps(base.to_dict(), indent=2, sort_keys=True) + "\n"))
        texts.append((ctx.path("change"), json.dumps(change.to_dict(), indent=2, sort_keys=True) + "\n"))
        outputs.update(baseline=ctx.rel("baseline_metrics"), change=ctx.rel("change"))
        table += "\n\n" + change.render()
    texts.append((ctx.path("metrics_table"), table + "\n"))
    for path, text in texts:
        atomic_write_text(path, text)
    st.outputs.update(outputs)
    st.counts.update(frames=sum(1 for f in gt.frames if f.ground_truth is not None), predictions=preds.total)


def _series(ctx: _Context, path: Path) -> EpochSeries:
    settings = ctx.cfg.checkpoint
    series = load_epoch_series(ctx.require(path, "epoch series"), aliases=settings.aliases)
    if settings.derive_f1 and "f1" not in series.metrics:
        series = series.with_f1()
    return series


def stage_pick_weights(ctx: _Context, st: StageRecord) -> None:
    settings = ctx.cfg.checkpoint
    series = _series(ctx, settings.series)
    epoch = select_checkpoint(series, settings.strategy)
    doc = {"strategy": str(settings.strategy), "epoch": epoch, "metrics": series.at(epoch)}
    if settings.baseline_series is not None:
        baseline = _series(ctx, settings.baseline_series)
        metrics = [m for m in ("map", "f1", "precision", "recall") if m in series.metrics and m in baseline.metrics]
        eb, ec, change = compare_checkpoints(baseline, series, settings.strategy, metrics, skip_zero=True)
        doc["baseline_epoch"] = eb
        doc["change"] = change.to_dict()
    atomic_write_text(ctx.path("checkpoint"), json.dumps(doc, indent=2, sort_keys=True) + "\n")
    st.outputs["checkpoint"] = ctx.rel("checkpoint")
    if settings.rolling_window > 1:
        rs = rolling_stats(series, settings.rolling_window)
        names = list(rs.mean)
        lines = [",".join(["epoch"] + [f"{n}_mean,{n}_std" for n in names])]
        for i, e in enumerate(rs.epochs):
            lines.append(",".join([str(e)] + [f"{rs.mean[n][i]!r},{rs.std[n][i]!r}" for n in names]))
        atomic_write_lines(ctx.path("rolling"), lines)
        st.outputs["rolling"] = ctx.rel("rolling")
    st.counts.update(epochs=len(series), selected_epoch=epoch)


STAGE_FUNCS = {
    "simulate": stage_simulate,
    "acquire": stage_acquire,
    "ingest": stage_ingest,
    "consensus": stage_consensus,
    "select": stage_select,
    "align": stage_align,
    "merge": stage_merge,
    "split": stage_split,
    "eval": stage_eval,
    "pick-weights": stage_pick_weights,
}


def run_pipeline(cfg: PipelineConfig, stages: Iterable[str] | None = None) -> RunRecord:
    """Run ``stages`` (default: the config's stage list) in dependency order.

    A failing stage raises :class:`StageError` naming the stage; its own
    outputs are never left half-written. On success the run record and a
    rendered report are written to the output directory.
    """
    wanted = set(cfg.stages if stages is None else stages)
    unknown = wanted - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages: {sorted(unknown)}")
    record = RunRecord(cfg.config_hash, config=cfg.resolved)
    ctx = _Context(cfg, record)
    ctx.out.mkdir(parents=True, exist_ok=True)
    for name in STAGES:
        if name not in wanted:
            continue
        st = StageRecord()
        t0 = time.perf_counter()
        try:
            STAGE_FUNCS[name](ctx, st)
        except StageError:
            raise
        except FileNotFoundError as exc:
            raise StageError(name, IngestError(str(exc))) from exc
        except (DataEngineError, OSError, ValueError) as exc:
            raise StageError(name, exc) from exc
        st.seconds = time.perf_counter() - t0
        frames = st.counts.get("frames")
        if frames and st.seconds > 0:
            st.throughput_fps = frames / st.seconds
        logger.info("stage %s: %.2fs %s", name, st.seconds, st.counts)
        record.stages[name] = st
    record.save(ctx.out / RUN_RECORD)
    atomic_write_text(ctx.out / REPORT, render_report(record, ctx.out) + "\n")
    return record


# ---------------------------------------------------------------------------
# reporting


def _read_json(path: Path) -> dict | None:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None


def render_report(record: RunRecord, out_dir: str | os.PathLike) -> str:
    """Human-readable run summary. Timings are left out so reruns compare equal."""
    out = Path(out_dir)
    lines = [f"run {record.config_hash}", f"stages run: {len(record.stages)}"]
    if not record.stages:
        lines.append("no stages were run")
    for name in (s for s in STAGES if s in record.stages):
        st = record.stages[name]
        counts = ", ".join(f"{k}={v}" for k, v in st.counts.items())
        lines.append(f"  {name}: {counts}")

    if "consensus" in record.stages:
        stats = _read_json(out / record.stages["consensus"].outputs["stats"])
        if stats:
            lines += [
                "",
                "consensus:",
                f"  quorum {stats['quorum']}/{stats['n_models']} at IoU >= {stats['iou_threshold']}",
                f"  {stats['query_detections']} query detections -> {stats['clusters']} clusters, "
                f"{stats['passed_clusters']} passed, {stats['rejected_clusters']} rejected",
                "  support histogram: " + ", ".join(f"{k}:{v}" for k, v in stats["support_histogram"].items()),
            ]

    if "select" in record.stages:
        rep = _read_json(out / record.stages["select"].outputs["report"])
        if rep:
            lines += [
                "",
                "selection:",
                f"  eliminated {rep['eliminated_any_pct']:.2f}% of incoming frames (no consensus instances)",
                f"  eliminated {rep['eliminated_selected_pct']:.2f}% of incoming frames after instance threshold",
                f"  selected {rep['frames_selected']} of {rep['total_frames']} frames",
                f"  crowd frames: {rep['crowd_frames']} ({rep['crowd_instances']} instances)",
            ]

    if "eval" in record.stages:
        table = out / record.stages["eval"].outputs["table"]
        if table.exists():
            lines += ["", "evaluation:"] + ["  " + t for t in table.read_text(encoding="utf-8").splitlines()]

    if "pick-weights" in record.stages:
        ck = _read_json(out / record.stages["pick-weights"].outputs["checkpoint"])
        if ck:
            metrics = ", ".join(f"{k}={v:.4f}" for k, v in sorted(ck["metrics"].items()))
            lines += ["", "checkpoint:", f"  {ck['strategy']} -> epoch {ck['epoch']} ({metrics})"]
            if "change" in ck:
                ch = ck["change"]["changes_pct"]
                lines.append(
                    f"  vs baseline epoch {ck['baseline_epoch']}: " + ", ".join(f"{k} {v:+.2f}%" for k, v in ch.items())
                )

    lines += ["", f"warnings ({len(record.warnings)}):"]
    lines += [f"  {w}" for w in record.warnings] or ["  none"]
    return "\n".join(lines)


def report(out_dir: str | os.PathLike) -> str:
    """Render the report for the run recorded in ``out_dir``."""
    record = RunRecord.load(Path(out_dir) / RUN_RECORD)
    return render_report(record, out_dir)
