"""Domain value types and axis-aligned box geometry.

Boxes are stored in absolute pixels using the corner convention
``(x_min, y_min, x_max, y_max)``. All types are frozen; modifying a frame
or manifest means building a new one (``dataclasses.replace``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime

from .errors import DegenerateBox


@dataclass(frozen=True, slots=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise DegenerateBox(f"non-finite coordinates {coords}")
        if min(coords) < 0:
            raise DegenerateBox(f"negative coordinates {coords}")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise DegenerateBox(f"box has no area {coords}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def shifted(self, dx: float, dy: float) -> BoundingBox:
        return BoundingBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)


@dataclass(frozen=True, slots=True)
class Detection:
    """One scored box emitted by one ensemble member for one frame."""

    frame_id: str
    model_id: str
    label: str
    confidence: float
    box: BoundingBox

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("detection label must be non-empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True, slots=True)
class GroundTruth:
    label: str
    box: BoundingBox


@dataclass(frozen=True)
class Frame:
    """A single image sample.

    ``ground_truth`` is ``None`` for unlabeled frames, which is different
    from a labeled frame with no objects (an empty tuple).
    """

    frame_id: str
    source_id: str
    timestamp: datetime
    width: int
    height: int
    tags: frozenset[str] = frozenset()
    ground_truth: tuple[GroundTruth, ...] | None = None

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"frame {self.frame_id!r} has non-positive size {self.width}x{self.height}")
        if self.timestamp.tzinfo is None:
            raise ValueError(f"frame {self.frame_id!r} timestamp must be timezone-aware")

    @property
    def instance_count(self) -> int:
        return len(self.ground_truth) if self.ground_truth else 0


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    frames: tuple[Frame, ...] = ()
    class_set: tuple[str, ...] = ()
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_ids(self) -> list[str]:
        return [f.frame_id for f in self.frames]

    @property
    def instance_count(self) -> int:
        return sum(f.instance_count for f in self.frames)

    def by_id(self) -> dict[str, Frame]:
        return {f.frame_id: f for f in self.frames}


@dataclass(frozen=True)
class ClassQuery:
    """Classes requested from the open-vocabulary ensemble.

    ``filter_subset`` is the part of ``classes_of_interest`` that the
    consensus filter actually votes on.
    """

    classes_of_interest: tuple[str, ...]
    filter_subset: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.filter_subset:
            object.__setattr__(self, "filter_subset", tuple(self.classes_of_interest))
        if not self.filter_subset:
            raise ValueError("filter_subset must be non-empty")
        missing = [c for c in self.filter_subset if c not in self.classes_of_interest]
        if missing:
            raise ValueError(f"filter_subset classes not in classes_of_interest: {missing}")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0.0 for disjoint boxes."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min)
    area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min)
    return inter / (area_a + area_b - inter)


def clamp_box(box: BoundingBox | tuple[float, float, float, float], width: float, height: float) -> BoundingBox:
    """Clip a box to ``[0, width] x [0, height]``.

    Accepts a raw coordinate tuple too, since overhanging boxes may carry
    negative coordinates that a ``BoundingBox`` cannot hold.

    Raises:
        DegenerateBox: if nothing of the box remains inside the frame.
    """
    if width <= 0 or height <= 0:
        raise ValueError("frame dimensions must be positive")
    x0, y0, x1, y1 = box.as_tuple() if isinstance(box, BoundingBox) else box
    if not all(math.isfinite(c) for c in (x0, y0, x1, y1)):
        raise DegenerateBox(f"non-finite coordinates {(x0, y0, x1, y1)}")
    cx0 = min(max(x0, 0.0), width)
    cy0 = min(max(y0, 0.0), height)
    cx1 = min(max(x1, 0.0), width)
    cy1 = min(max(y1, 0.0), height)
    if not (cx1 > cx0 and cy1 > cy0):
        raise DegenerateBox(f"box {(x0, y0, x1, y1)} has no area inside {width}x{height}")
    return BoundingBox(float(cx0), float(cy0), float(cx1), float(cy1))
