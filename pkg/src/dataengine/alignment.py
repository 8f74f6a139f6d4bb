"""Label-scheme alignment between datasets, dataset merging and splitting.

The similarity grid between a coarse source scheme and a finer target
scheme is produced outside this package (e.g. by a zero-shot text/image
classifier) and read from a CSV file: the header row lists the target
classes after an empty corner cell, every further row starts with a source
class followed by its scores.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .core import DatasetManifest, GroundTruth
from .errors import BadRatios, DuplicateFrameId, ParseError, SchemeMismatch, UnknownSourceClass

logger = logging.getLogger(__name__)

DEFAULT_ALIGN_THRESHOLD = 0.5


@dataclass(frozen=True)
class SimilarityMatrix:
    source_classes: tuple[str, ...]
    target_classes: tuple[str, ...]
    values: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "source_classes", tuple(self.source_classes))
        object.__setattr__(self, "target_classes", tuple(self.target_classes))
        object.__setattr__(self, "values", tuple(tuple(float(v) for v in row) for row in self.values))
        if len(self.values) != len(self.source_classes):
            raise ValueError("row count does not match source classes")
        for row in self.values:
            if len(row) != len(self.target_classes):
                raise ValueError("column count does not match target classes")
            for v in row:
                if not (0.0 <= v <= 1.0):
                    raise ValueError(f"similarity {v} outside [0, 1]")

    def row(self, source: str) -> tuple[float, ...]:
        return self.values[self.source_classes.index(source)]


def load_similarity_matrix(path: str | os.PathLike) -> SimilarityMatrix:
    path = str(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if any(cell.strip() for cell in r)]
    if not rows:
        raise ParseError("empty similarity matrix", path)
    targets = [c.strip() for c in rows[0][1:]]
    sources, values = [], []
    for lineno, r in enumerate(rows[1:], 2):
        if len(r) != len(targets) + 1:
            raise ParseError(f"expected {len(targets) + 1} cells, got {len(r)}", path, lineno)
        sources.append(r[0].strip())
        try:
            values.append([float(c) for c in r[1:]])
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from exc
    try:
        return SimilarityMatrix(tuple(sources), tuple(targets), tuple(map(tuple, values)))
    except ValueError as exc:
        raise ParseError(str(exc), path) from exc


def save_similarity_matrix(z: SimilarityMatrix, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *z.target_classes])
        for src, row in zip(z.source_classes, z.values):
            w.writerow([src, *(repr(v) for v in row)])


@dataclass(frozen=True)
class AlignmentMap:
    """Source class -> target class; ``None`` means keep the source label."""

    mapping: Mapping[str, str | None]
    threshold: float
    target_classes: tuple[str, ...] = ()

    def target_for(self, label: str) -> str:
        if label in self.mapping:
            return self.mapping[label] or label
        if label in self.target_classes:
            return label
        raise UnknownSourceClass(label)


def build_alignment(z: SimilarityMatrix, threshold: float = DEFAULT_ALIGN_THRESHOLD) -> AlignmentMap:
    """Map each source class to its most similar target class.

    The row maximum must reach ``threshold``, otherwise the source class is
    retained. Equal scores resolve to the first target in list order.
    """
    mapping: dict[str, str | None] = {}
    for src, row in zip(z.source_classes, z.values):
        choice = None
        if row:
            best = max(range(len(row)), key=lambda j: (row[j], -j))
            if row[best] >= threshold:
                choice = z.target_classes[best]
        mapping[src] = choice
        logger.info("align %s -> %s", src, choice if choice is not None else "(retained)")
    return AlignmentMap(mapping, threshold, z.target_classes)


def apply_alignment(manifest: DatasetManifest, amap: AlignmentMap) -> DatasetManifest:
    """Rewrite ground-truth labels through ``amap``; boxes stay untouched.

    Raises:
        UnknownSourceClass: a label is neither a mapped source nor a target class.
    """
    frames = []
    produced: list[str] = []
    for frame in manifest.frames:
        if frame.ground_truth is None:
            frames.append(frame)
            continue
        gt = []
        for g in frame.ground_truth:
            label = amap.target_for(g.label)
            produced.append(label)
            gt.append(g if label == g.label else GroundTruth(label, g.box))
        frames.append(replace(frame, ground_truth=tuple(gt)))
    class_set: list[str] = []
    for c in manifest.class_set:
        try:
            class_set.append(amap.target_for(c))
        except UnknownSourceClass:
            class_set.append(c)
    class_set.extend(produced)
    return replace(manifest, frames=tuple(frames), class_set=tuple(dict.fromkeys(class_set)))


def merge_datasets(a: DatasetManifest, b: DatasetManifest, name: str | None = None) -> DatasetManifest:
    """Concatenate ``a`` then ``b``.

    Both class schemes must match as sets. A manifest without frames merges
    as the identity: the other input comes back unchanged.

    Raises:
        SchemeMismatch: the class schemes differ.
        DuplicateFrameId: a frame id appears in both inputs.
    """
    if not b.frames:
        return a
    if not a.frames:
        return b
    if set(a.class_set) != set(b.class_set):
        raise SchemeMismatch(f"class sets differ: {sorted(set(a.class_set) ^ set(b.class_set))}")
    ids = {f.frame_id for f in a.frames}
    for f in b.frames:
        if f.frame_id in ids:
            raise DuplicateFrameId(f.frame_id)
    return DatasetManifest(
        name=name or a.name,
        frames=a.frames + b.frames,
        class_set=a.class_set,
        provenance=f"merge({a.name}:{a.provenance or '-'} + {b.name}:{b.provenance or '-'})",
    )


def split_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; ties go to the earlier split."""
    raw = [n * r for r in ratios]
    sizes = [math.floor(x) for x in raw]
    short = n - sum(sizes)
    by_remainder = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in by_remainder[:short]:
        sizes[i] += 1
    return sizes


def check_ratios(ratios: Sequence[float]) -> None:
    if len(ratios) != 3:
        raise BadRatios(f"need three ratios (train, val, test), got {len(ratios)}")
    if any(not math.isfinite(r) or r < 0 for r in ratios):
        raise BadRatios("ratios must be finite and non-negative")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios sum to {sum(ratios)}, not 1")
    if not any(r > 0 for r in ratios):
        raise BadRatios("at least one ratio must be positive")


def split_dataset(
    manifest: DatasetManifest,
    ratios: Sequence[float] = (0.8, 0.2, 0.0),
    seed: int = 0,
) -> tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    """Shuffle with ``seed`` and cut into train/val/test pieces."""
    check_ratios(ratios)
    n = len(manifest.frames)
    perm = np.random.default_rng(seed).permutation(n)
    shuffled = [manifest.frames[i] for i in perm]
    sizes = split_sizes(n, ratios)
    parts = []
    start = 0
    for suffix, size in zip(("train", "val", "test"), sizes):
        parts.append(
            replace(
                manifest,
                name=f"{manifest.name}-{suffix}",
                frames=tuple(shuffled[start : start + size]),
                provenance=f"split({manifest.name}, seed={seed}, ratios={list(ratios)})",
            )
        )
        start += size
    return parts[0], parts[1], parts[2]
