"""Reading and writing manifests and detection files.

Manifest files are JSON Lines: the first line is a header object
(``name``, ``class_set``, ``provenance``), every following line is one
frame. Detection files are JSON Lines with one detection per line. Both
are written in a canonical form (sorted keys, compact separators) so that
loading and re-saving a canonical file reproduces it byte for byte.
"""

from __future__ import annotations

import json
import logging
import os
import re
import tempfile
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .core import BoundingBox, DatasetManifest, Detection, Frame, GroundTruth, clamp_box
from .errors import (
    DegenerateBox,
    DuplicateFrameId,
    ParseError,
    SourceUnreachable,
    UnknownLabel,
)

logger = logging.getLogger(__name__)

# Box conventions accepted in detection records. The suffix "n" marks
# coordinates normalized by frame width/height.
CONVENTIONS = ("xyxy", "xywh", "cxcywh", "xyxyn", "xywhn", "cxcywhn")


# ---------------------------------------------------------------------------
# timestamps


def parse_timestamp(value: str) -> datetime:
    """Parse an RFC 3339 timestamp into an aware UTC datetime."""
    if not isinstance(value, str):
        raise ValueError(f"timestamp must be a string, got {value!r}")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    spec = "microseconds" if ts.microsecond else "seconds"
    return ts.replace(tzinfo=None).isoformat(timespec=spec) + "Z"


# ---------------------------------------------------------------------------
# low level helpers


def dumps(obj) -> str:
    """Canonical single-line JSON."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file and rename.

    Readers never observe a partially written file at ``path``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_lines(path: str | os.PathLike, lines: Iterable[str]) -> None:
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def _iter_json_lines(path: str | os.PathLike) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", str(path), lineno) from exc
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", str(path), lineno)
            yield lineno, obj


def _box_to_list(box: BoundingBox) -> list[float]:
    return [float(box.x_min), float(box.y_min), float(box.x_max), float(box.y_max)]


# ---------------------------------------------------------------------------
# manifests


def frame_to_record(frame: Frame) -> dict:
    rec = {
        "frame_id": frame.frame_id,
        "source_id": frame.source_id,
        "timestamp": format_timestamp(frame.timestamp),
        "width": frame.width,
        "height": frame.height,
        "tags": sorted(frame.tags),
        "ground_truth": None,
    }
    if frame.ground_truth is not None:
        rec["ground_truth"] = [{"label": g.label, "box": _box_to_list(g.box)} for g in frame.ground_truth]
    return rec


def frame_from_record(rec: Mapping) -> Frame:
    width = int(rec["width"])
    height = int(rec["height"])
    gt = rec.get("ground_truth")
    ground_truth = None
    if gt is not None:
        items = []
        for item in gt:
            label = item["label"]
            if not isinstance(label, str) or not label:
                raise ValueError("ground-truth label must be a non-empty string")
            raw = item["box"]
            if not isinstance(raw, (list, tuple)) or len(raw) != 4:
                raise ValueError("ground-truth box must be a list of 4 numbers")
            box = clamp_box(tuple(float(v) for v in raw), width, height)
            items.append(GroundTruth(label, box))
        ground_truth = tuple(items)
    return Frame(
        frame_id=str(rec["frame_id"]),
        source_id=str(rec.get("source_id", "")),
        timestamp=parse_timestamp(rec["timestamp"]),
        width=width,
        height=height,
        tags=frozenset(rec.get("tags") or ()),
        ground_truth=ground_truth,
    )


def validate_manifest(manifest: DatasetManifest) -> DatasetManifest:
    """Check manifest invariants, raising on the first violation."""
    seen: set[str] = set()
    classes = set(manifest.class_set)
    for frame in manifest.frames:
        if frame.frame_id in seen:
            raise DuplicateFrameId(frame.frame_id)
        seen.add(frame.frame_id)
        for g in frame.ground_truth or ():
            if g.label not in classes:
                raise UnknownLabel(g.label, frame.frame_id)
    return manifest


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Load a manifest file, preserving frame order.

    Raises:
        ParseError: the file is not a well-formed manifest.
        DuplicateFrameId: two frames share an id.
        UnknownLabel: a ground-truth label is missing from the class set.
    """
    path = str(path)
    header = None
    frames: list[Frame] = []
    seen: set[str] = set()
    for lineno, obj in _iter_json_lines(path):
        if header is None:
            if "class_set" not in obj or "name" not in obj:
                raise ParseError("first line must be a header with 'name' and 'class_set'", path, lineno)
            header = obj
            continue
        try:
            frame = frame_from_record(obj)
        except DegenerateBox as exc:
            raise ParseError(f"degenerate ground-truth box: {exc}", path, lineno) from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad frame record: {exc!r}", path, lineno) from exc
        if frame.frame_id in seen:
            raise DuplicateFrameId(frame.frame_id)
        seen.add(frame.frame_id)
        frames.append(frame)
    if header is None:
        raise ParseError("empty manifest (missing header)", path)
    class_set = header["class_set"]
    if not isinstance(class_set, list) or not all(isinstance(c, str) for c in class_set):
        raise ParseError("class_set must be a list of strings", path, 1)
    manifest = DatasetManifest(
        name=str(header["name"]),
        frames=tuple(frames),
        class_set=tuple(class_set),
        provenance=str(header.get("provenance", "")),
    )
    return validate_manifest(manifest)


def manifest_lines(manifest: DatasetManifest) -> list[str]:
    header = {"name": manifest.name, "class_set": list(manifest.class_set), "provenance": manifest.provenance}
    return [dumps(header)] + [dumps(frame_to_record(f)) for f in manifest.frames]


def save_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    atomic_write_lines(path, manifest_lines(manifest))


# ---------------------------------------------------------------------------
# detections


@dataclass
class DetectionSet:
    """Detections grouped by frame, plus counters for skipped records."""

    by_frame: dict[str, list[Detection]] = field(default_factory=dict)
    orphaned: int = 0
    degenerate: int = 0

    def __getitem__(self, frame_id: str) -> list[Detection]:
        return self.by_frame[frame_id]

    def __len__(self) -> int:
        return len(self.by_frame)

    @property
    def total(self) -> int:
        return sum(len(v) for v in self.by_frame.values())

    def merge(self, other: DetectionSet) -> DetectionSet:
        """Concatenate per-frame lists (self first); counters add up."""
        merged = {k: list(v) for k, v in self.by_frame.items()}
        for k, v in other.by_frame.items():
            merged.setdefault(k, []).extend(v)
        return DetectionSet(merged, self.orphaned + other.orphaned, self.degenerate + other.degenerate)


def convert_box(coords, convention: str, width: int, height: int) -> tuple[float, float, float, float]:
    """Convert raw coordinates in ``convention`` to absolute corner form (unclamped)."""
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown box convention {convention!r}")
    a, b, c, d = (float(v) for v in coords)
    if convention.endswith("n"):
        a, c = a * width, c * width
        b, d = b * height, d * height
        convention = convention[:-1]
    if convention == "xywh":
        return a, b, a + c, b + d
    if convention == "cxcywh":
        return a - c / 2.0, b - d / 2.0, a + c / 2.0, b + d / 2.0
    return a, b, c, d


def detection_to_record(det: Detection) -> dict:
    box = det.box
    return {
        "frame_id": det.frame_id,
        "model_id": det.model_id,
        "label": det.label,
        "confidence": float(det.confidence),
        "x_min": float(box.x_min),
        "y_min": float(box.y_min),
        "x_max": float(box.x_max),
        "y_max": float(box.y_max),
        "convention": "xyxy",
    }


def save_detections(detections: Iterable[Detection], path: str | os.PathLike) -> None:
    atomic_write_lines(path, (dumps(detection_to_record(d)) for d in detections))


def load_detections(
    path: str | os.PathLike,
    manifest: DatasetManifest,
    model_id: str | None = None,
) -> DetectionSet:
    """Load a detection file against ``manifest``.

    Boxes are converted to absolute corners and clamped to the frame.
    Records for frames not in the manifest are counted as orphaned and
    records whose box vanishes after clamping are counted as degenerate;
    neither is fatal. ``model_id`` fills in records that lack one.
    """
    path = str(path)
    frames = manifest.by_id()
    out = DetectionSet()
    for lineno, rec in _iter_json_lines(path):
        try:
            frame_id = str(rec["frame_id"])
            mid = rec.get("model_id", model_id)
            if mid is None:
                raise KeyError("model_id")
            label = rec["label"]
            confidence = float(rec["confidence"])
            coords = (rec["x_min"], rec["y_min"], rec["x_max"], rec["y_max"])
            convention = rec.get("convention", "xyxy")
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad detection record: {exc!r}", path, lineno) from exc
        frame = frames.get(frame_id)
        if frame is None:
            out.orphaned += 1
            continue
        try:
            raw = convert_box(coords, convention, frame.width, frame.height)
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), path, lineno) from exc
        try:
            box = clamp_box(raw, frame.width, frame.height)
        except DegenerateBox:
            out.degenerate += 1
            continue
        try:
            det = Detection(frame_id, str(mid), label, confidence, box)
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from exc
        out.by_frame.setdefault(frame_id, []).append(det)
    if out.orphaned or out.degenerate:
        logger.warning("%s: %d orphaned, %d degenerate records skipped", path, out.orphaned, out.degenerate)
    return out


def load_coco_results(
    path: str | os.PathLike,
    manifest: DatasetManifest,
    model_id: str,
    categories: Mapping[int, str],
    image_ids: Mapping[int, str] | None = None,
) -> DetectionSet:
    """Import a COCO detection-results file (``[{image_id, category_id, bbox, score}]``).

    ``bbox`` is ``[x, y, w, h]`` in absolute pixels. ``image_ids`` maps COCO
    image ids to manifest frame ids; without it ``str(image_id)`` is used.
    Unknown category ids raise ``ParseError``.
    """
    path = str(path)
    try:
        with open(path, encoding="utf-8") as fh:
            records = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path) from exc
    if not isinstance(records, list):
        raise ParseError("COCO results must be a JSON list", path)
    frames = manifest.by_id()
    out = DetectionSet()
    for i, rec in enumerate(records):
        try:
            image_id = rec["image_id"]
            cat = int(rec["category_id"])
            bbox = rec["bbox"]
            score = float(rec["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"record {i}: {exc!r}", path) from exc
        if cat not in categories:
            raise ParseError(f"record {i}: unknown category_id {cat}", path)
        if image_ids is not None:
            frame_id = image_ids.get(image_id, image_ids.get(str(image_id)))
        else:
            frame_id = str(image_id)
        frame = frames.get(frame_id) if frame_id is not None else None
        if frame is None:
            out.orphaned += 1
            continue
        try:
            box = clamp_box(convert_box(bbox, "xywh", frame.width, frame.height), frame.width, frame.height)
        except DegenerateBox:
            out.degenerate += 1
            continue
        except (TypeError, ValueError) as exc:
            raise ParseError(f"record {i}: {exc}", path) from exc
        out.by_frame.setdefault(frame_id, []).append(Detection(frame_id, model_id, categories[cat], score, box))
    return out


def load_coco_sidecar(path: str | os.PathLike) -> tuple[dict[int, str], dict[str, str] | None]:
    """Read the category (and optional image-id) mapping for a COCO import.

    Sidecar layout: ``{"categories": {"1": "person", ...}, "images": {"17": "frame_17"}}``;
    a COCO-style ``categories`` list of ``{id, name}`` objects is accepted too.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    cats = doc.get("categories")
    if isinstance(cats, list):
        categories = {int(c["id"]): str(c["name"]) for c in cats}
    elif isinstance(cats, dict):
        categories = {int(k): str(v) for k, v in cats.items()}
    else:
        raise ParseError("sidecar needs a 'categories' mapping", str(path))
    images = doc.get("images")
    image_ids = {str(k): str(v) for k, v in images.items()} if images else None
    return categories, image_ids


# ---------------------------------------------------------------------------
# acquisition filters


@dataclass(frozen=True)
class AcquisitionFilter:
    start: datetime | None = None
    end: datetime | None = None
    stride: int = 1

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.start is not None and self.end is not None and self.start > self.end:
            raise ValueError("start must not be after end")

    def in_range(self, ts: datetime) -> bool:
        if self.start is not None and ts < self.start:
            return False
        if self.end is not None and ts > self.end:
            return False
        return True


def filter_by_time(manifest: DatasetManifest, flt: AcquisitionFilter) -> DatasetManifest:
    """Keep frames inside the (inclusive) time range, then every ``stride``-th survivor."""
    kept = [f for f in manifest.frames if flt.in_range(f.timestamp)]
    return replace(manifest, frames=tuple(kept[:: flt.stride]))


class ObjectStore:
    """Minimal listing interface over a key/value object store."""

    def list_keys(self) -> list[str]:
        raise NotImplementedError


class LocalObjectStore(ObjectStore):
    """Treats a directory tree as a bucket; keys are POSIX relative paths."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    def list_keys(self) -> list[str]:
        if not self.root.is_dir():
            raise SourceUnreachable(f"{self.root} is not a directory")
        return [p.relative_to(self.root).as_posix() for p in self.root.rglob("*") if p.is_file()]


class ListingObjectStore(ObjectStore):
    """A text file with one object key per line (e.g. an exported bucket listing)."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)

    def list_keys(self) -> list[str]:
        try:
            text = self.path.read_text(encoding="utf-8")
        except OSError as exc:
            raise SourceUnreachable(str(exc)) from exc
        return [line.strip() for line in text.splitlines() if line.strip()]


def open_object_store(locator: str) -> ObjectStore:
    """Resolve a locator: ``file://<dir>``, ``listing://<file>`` or a plain path."""
    if locator.startswith("file://"):
        return LocalObjectStore(locator[len("file://"):])
    if locator.startswith("listing://"):
        return ListingObjectStore(locator[len("listing://"):])
    if "://" in locator:
        raise SourceUnreachable(f"unsupported object-store scheme in {locator!r}")
    p = Path(locator)
    return ListingObjectStore(p) if p.is_file() else LocalObjectStore(p)


DEFAULT_KEY_PATTERN = r"(?P<ts>\d{8}T\d{6}Z)"
DEFAULT_KEY_TIME_FORMAT = "%Y%m%dT%H%M%SZ"


@dataclass
class KeyListing:
    keys: list[str]
    unparseable: int = 0


def list_remote_objects(
    source: str | ObjectStore,
    flt: AcquisitionFilter,
    key_pattern: str = DEFAULT_KEY_PATTERN,
    time_format: str | None = DEFAULT_KEY_TIME_FORMAT,
) -> KeyListing:
    """List object keys whose embedded timestamp passes ``flt``.

    Keys are sorted lexicographically, range-filtered, then strided.
    ``key_pattern`` must contain a named group ``ts``; the captured text is
    parsed with ``time_format`` (``None`` means RFC 3339). Keys that do not
    match or do not parse are skipped and counted.
    """
    store = open_object_store(source) if isinstance(source, str) else source
    try:
        keys = sorted(store.list_keys())
    except SourceUnreachable:
        raise
    except OSError as exc:
        raise SourceUnreachable(str(exc)) from exc
    rx = re.compile(key_pattern)
    if "ts" not in rx.groupindex:
        raise ValueError("key_pattern needs a named group 'ts'")
    kept: list[str] = []
    bad = 0
    for key in keys:
        m = rx.search(key)
        if m is None:
            bad += 1
            continue
        try:
            if time_format is None:
                ts = parse_timestamp(m.group("ts"))
            else:
                ts = datetime.strptime(m.group("ts"), time_format).replace(tzinfo=timezone.utc)
        except ValueError:
            bad += 1
            continue
        if flt.in_range(ts):
            kept.append(key)
    if bad:
        logger.warning("%d object keys without a parseable timestamp skipped", bad)
    return KeyListing(kept[:: flt.stride], bad)


__all__ = [
    "AcquisitionFilter",
    "DetectionSet",
    "KeyListing",
    "convert_box",
    "filter_by_time",
    "list_remote_objects",
    "load_coco_results",
    "load_coco_sidecar",
    "load_detections",
    "load_manifest",
    "save_detections",
    "save_manifest",
]
