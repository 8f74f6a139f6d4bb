"""Synthetic scenes and noisy detectors for oracle tests and filter validation.

Every random draw comes from a Philox stream keyed by ``(seed, frame_id,
model_id)``, so results do not depend on which worker processes a frame
or in which order frames are visited.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Mapping, Sequence

import numpy as np

from .core import BoundingBox, DatasetManifest, Detection, Frame, GroundTruth, clamp_box, iou
from .errors import DegenerateBox, InfeasiblePlacement

SCENE_STREAM = "__scene__"
EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)


def _key(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def stream(seed: int, frame_id: str, model_id: str = SCENE_STREAM) -> np.random.Generator:
    """Independent random stream for one (seed, frame, model) triple."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _key(frame_id), _key(model_id)])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SceneSpec:
    frame_id: str
    width: int = 1280
    height: int = 720
    timestamp: datetime = EPOCH
    source_id: str = "sim"
    box_width: tuple[float, float] = (20.0, 120.0)
    box_height: tuple[float, float] = (40.0, 200.0)
    max_overlap: float = 0.1
    max_attempts: int = 200


def _sample_box(rng: np.random.Generator, width: int, height: int, bw: tuple[float, float], bh: tuple[float, float]):
    w = rng.uniform(bw[0], bw[1])
    h = rng.uniform(bh[0], bh[1])
    x = rng.uniform(0.0, width - w)
    y = rng.uniform(0.0, height - h)
    return BoundingBox(x, y, x + w, y + h)


def generate_scene(
    spec: SceneSpec,
    count: int,
    class_mix: Mapping[str, float],
    seed: int,
) -> Frame:
    """Place ``count`` ground-truth boxes uniformly at random.

    A candidate box is rejected when it overlaps an already placed box by
    more than ``spec.max_overlap`` IoU.

    Raises:
        InfeasiblePlacement: the boxes cannot be placed within the attempt budget.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if spec.box_width[0] > spec.width or spec.box_height[0] > spec.height or spec.box_width[0] <= 0:
        raise InfeasiblePlacement(f"boxes of {spec.box_width}x{spec.box_height} do not fit {spec.width}x{spec.height}")
    rng = stream(seed, spec.frame_id)
    labels = list(class_mix)
    if count and not labels:
        raise ValueError("class_mix must name at least one class")
    weights = np.array([class_mix[c] for c in labels], dtype=float)
    bw = (spec.box_width[0], min(spec.box_width[1], spec.width))
    bh = (spec.box_height[0], min(spec.box_height[1], spec.height))
    placed: list[GroundTruth] = []
    for _ in range(count):
        label = labels[int(rng.choice(len(labels), p=weights / weights.sum()))]
        for _attempt in range(spec.max_attempts):
            box = _sample_box(rng, spec.width, spec.height, bw, bh)
            if all(iou(box, g.box) <= spec.max_overlap for g in placed):
                placed.append(GroundTruth(label, box))
                break
        else:
            raise InfeasiblePlacement(f"{spec.frame_id}: could only place {len(placed)} of {count} boxes")
    return Frame(
        frame_id=spec.frame_id,
        source_id=spec.source_id,
        timestamp=spec.timestamp,
        width=spec.width,
        height=spec.height,
        ground_truth=tuple(placed),
    )


@dataclass(frozen=True)
class DetectorNoiseModel:
    """How one simulated detector deviates from ground truth.

    ``conf_model`` holds Beta distribution parameters for the confidence of
    true detections (``"tp"``) and false positives (``"fp"``).
    ``label_map`` renames ground-truth labels the way a detector prompted
    with synonyms would; false-positive labels are drawn from ``fp_labels``.
    """

    detect_prob: float = 0.8
    fp_rate: float = 1.0
    loc_jitter: float = 2.0
    conf_model: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: {"tp": (8.0, 2.0), "fp": (2.0, 5.0)}
    )
    seed: int = 0
    label_map: Mapping[str, str] = field(default_factory=dict)
    fp_labels: tuple[str, ...] = ()
    fp_box_width: tuple[float, float] = (20.0, 120.0)
    fp_box_height: tuple[float, float] = (40.0, 200.0)

    def __post_init__(self) -> None:
        if not 0.0 <= self.detect_prob <= 1.0:
            raise ValueError("detect_prob must be in [0, 1]")
        if self.fp_rate < 0 or self.loc_jitter < 0:
            raise ValueError("fp_rate and loc_jitter must be non-negative")
        for key in ("tp", "fp"):
            a, b = self.conf_model[key]
            if a <= 0 or b <= 0:
                raise ValueError("Beta parameters must be positive")


def simulate_detector(frame: Frame, noise: DetectorNoiseModel, model_id: str = "sim") -> list[Detection]:
    """Draw one detector's output for ``frame``.

    Each ground-truth box is found with probability ``detect_prob`` and its
    corners are jittered; a Poisson number of false boxes lands uniformly in
    the frame. True detections come first, in ground-truth order.
    """
    rng = stream(noise.seed, frame.frame_id, model_id)
    out: list[Detection] = []
    tp_a, tp_b = noise.conf_model["tp"]
    fp_a, fp_b = noise.conf_model["fp"]
    for g in frame.ground_truth or ():
        hit = rng.random() < noise.detect_prob
        jitter = rng.normal(0.0, noise.loc_jitter, size=4) if noise.loc_jitter > 0 else np.zeros(4)
        conf = float(rng.beta(tp_a, tp_b))
        if not hit:
            continue
        raw = tuple(float(c) for c in np.asarray(g.box.as_tuple()) + jitter) if noise.loc_jitter > 0 else g.box.as_tuple()
        try:
            box = clamp_box(raw, frame.width, frame.height)
        except DegenerateBox:
            continue
        label = noise.label_map.get(g.label, g.label)
        out.append(Detection(frame.frame_id, model_id, label, conf, box))
    n_fp = int(rng.poisson(noise.fp_rate)) if noise.fp_rate > 0 else 0
    fp_labels = noise.fp_labels or tuple(dict.fromkeys(noise.label_map.get(g.label, g.label) for g in frame.ground_truth or ()))
    bw = (noise.fp_box_width[0], min(noise.fp_box_width[1], frame.width))
    bh = (noise.fp_box_height[0], min(noise.fp_box_height[1], frame.height))
    for _ in range(n_fp):
        box = _sample_box(rng, frame.width, frame.height, bw, bh)
        label = fp_labels[int(rng.integers(len(fp_labels)))] if fp_labels else "object"
        out.append(Detection(frame.frame_id, model_id, label, float(rng.beta(fp_a, fp_b)), box))
    return out


@dataclass(frozen=True)
class Scenario:
    """A synthetic stream: frame layout, instance statistics and the ensemble."""

    n_frames: int = 1000
    seed: int = 0
    width: int = 1280
    height: int = 720
    instances_mean: float = 3.0
    empty_fraction: float = 0.0
    max_instances: int = 60
    class_mix: Mapping[str, float] = field(default_factory=lambda: {"pedestrian": 0.9, "cyclist": 0.1})
    models: Mapping[str, DetectorNoiseModel] = field(default_factory=dict)
    start: datetime = EPOCH
    interval_s: float = 1.0
    frame_prefix: str = "sim"
    name: str = "synthetic"
    box_width: tuple[float, float] = (20.0, 120.0)
    box_height: tuple[float, float] = (40.0, 200.0)
    max_overlap: float = 0.1

    def frame_id(self, i: int) -> str:
        return f"{self.frame_prefix}{i:07d}"


def scene_count(scenario: Scenario, frame_id: str) -> int:
    rng = stream(scenario.seed, frame_id, "__count__")
    if rng.random() < scenario.empty_fraction:
        return 0
    return int(min(scenario.max_instances, max(1, rng.poisson(scenario.instances_mean))))


def simulate_frame(scenario: Scenario, i: int) -> tuple[Frame, list[Detection]]:
    """Scene ``i`` of the stream plus every ensemble member's detections on it."""
    fid = scenario.frame_id(i)
    spec = SceneSpec(
        frame_id=fid,
        width=scenario.width,
        height=scenario.height,
        timestamp=scenario.start + timedelta(seconds=i * scenario.interval_s),
        box_width=scenario.box_width,
        box_height=scenario.box_height,
        max_overlap=scenario.max_overlap,
    )
    frame = generate_scene(spec, scene_count(scenario, fid), scenario.class_mix, scenario.seed)
    dets: list[Detection] = []
    for model_id, noise in scenario.models.items():
        dets.extend(simulate_detector(frame, noise, model_id))
    return frame, dets


def simulate_range(scenario: Scenario, indices: Sequence[int]) -> list[tuple[Frame, list[Detection]]]:
    return [simulate_frame(scenario, i) for i in indices]


def simulate(scenario: Scenario) -> tuple[DatasetManifest, dict[str, list[Detection]]]:
    """Run the whole scenario in-process; returns the manifest and detections by frame."""
    frames, by_frame = [], {}
    for frame, dets in simulate_range(scenario, range(scenario.n_frames)):
        frames.append(frame)
        by_frame[frame.frame_id] = dets
    manifest = DatasetManifest(
        name=scenario.name,
        frames=tuple(frames),
        class_set=tuple(scenario.class_mix),
        provenance=f"simgen(seed={scenario.seed})",
    )
    return manifest, by_frame


def uniform_ensemble(
    n_models: int,
    seed: int = 0,
    **noise_kwargs,
) -> dict[str, DetectorNoiseModel]:
    """``n_models`` identically configured, independently seeded detectors named m0, m1, ..."""
    return {f"m{k}": DetectorNoiseModel(seed=seed + 1000 * (k + 1), **noise_kwargs) for k in range(n_models)}
