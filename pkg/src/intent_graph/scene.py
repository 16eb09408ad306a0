"""Scene-level domain types.

Bounding boxes live in image-pixel coordinates with y growing downward.
The spatial relation between the pedestrian and a scene object is the 8-vector

    [dxmin, dymin, dxmax, dymax, dxc, dyc, w_union, h_union]

where every delta is object minus pedestrian and the union terms are the
width/height of the smallest box containing both. Deltas are raw pixels by
default; pass frame_size to get frame-relative units instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .autodiff import Tensor


class ObjectCategory(Enum):
    """Closed category taxonomy for non-pedestrian scene objects."""

    BIKE = "bike"
    BUS = "bus"
    CAR = "car"
    CARAVAN = "caravan"
    MOTORCYCLE = "motorcycle"
    TRAILER = "trailer"
    TRUCK = "truck"
    OTHER_VEHICLE = "other_vehicle"
    BICYCLIST = "bicyclist"
    MOTORCYCLIST = "motorcyclist"
    OTHER_RIDER = "other_rider"
    CROSSWALK_PLAIN = "crosswalk_plain"
    CROSSWALK_ZEBRA = "crosswalk_zebra"
    TRAFFIC_LIGHT = "traffic_light"
    OTHER = "other"

    @classmethod
    def from_name(cls, name: str) -> "ObjectCategory":
        for member in cls:
            if member.value == name:
                return member
        raise ValueError(f"unknown object category {name!r}")

    @property
    def index(self) -> int:
        """Stable position in declaration order, used for one-hot encoding."""
        return _CATEGORY_INDEX[self]


_CATEGORY_INDEX = {member: i for i, member in enumerate(ObjectCategory)}
CATEGORY_COUNT = len(ObjectCategory)

VEHICLE_CATEGORIES = frozenset(
    {
        ObjectCategory.BIKE,
        ObjectCategory.BUS,
        ObjectCategory.CAR,
        ObjectCategory.CARAVAN,
        ObjectCategory.MOTORCYCLE,
        ObjectCategory.TRAILER,
        ObjectCategory.TRUCK,
        ObjectCategory.OTHER_VEHICLE,
    }
)
RIDER_CATEGORIES = frozenset(
    {ObjectCategory.BICYCLIST, ObjectCategory.MOTORCYCLIST, ObjectCategory.OTHER_RIDER}
)
CROSSWALK_CATEGORIES = frozenset(
    {ObjectCategory.CROSSWALK_PLAIN, ObjectCategory.CROSSWALK_ZEBRA}
)


def category_one_hot(category: ObjectCategory) -> np.ndarray:
    vec = np.zeros(CATEGORY_COUNT)
    vec[category.index] = 1.0
    return vec


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name}: non-finite value {v!r}")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box; corners in pixels, xmin <= xmax and ymin <= ymax."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        _require_finite("BoundingBox", self.xmin, self.ymin, self.xmax, self.ymax)
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise ValueError(
                f"degenerate box: ({self.xmin}, {self.ymin}, {self.xmax}, {self.ymax})"
            )

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))

    @property
    def bottom_center(self) -> tuple[float, float]:
        """Ground contact point: horizontal center of the bottom edge."""
        return (0.5 * (self.xmin + self.xmax), self.ymax)

    def shift_x(self, dx: float) -> "BoundingBox":
        """The same box translated horizontally by dx (camera alignment)."""
        return BoundingBox(self.xmin + dx, self.ymin, self.xmax + dx, self.ymax)

    def union(self, other: "BoundingBox") -> "BoundingBox":
        return BoundingBox(
            min(self.xmin, other.xmin),
            min(self.ymin, other.ymin),
            max(self.xmax, other.xmax),
            max(self.ymax, other.ymax),
        )

    def as_list(self) -> list[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]


@dataclass(frozen=True)
class SpatialRelation:
    """Object-minus-pedestrian box geometry plus the union box extent."""

    dxmin: float
    dymin: float
    dxmax: float
    dymax: float
    dxc: float
    dyc: float
    w_union: float
    h_union: float

    def __post_init__(self):
        _require_finite(
            "SpatialRelation",
            self.dxmin,
            self.dymin,
            self.dxmax,
            self.dymax,
            self.dxc,
            self.dyc,
            self.w_union,
            self.h_union,
        )
        if self.w_union < 0 or self.h_union < 0:
            raise ValueError("union extent cannot be negative")

    def as_vector(self) -> Tensor:
        """The 1x8 constant tensor in field declaration order."""
        return Tensor(
            [
                self.dxmin,
                self.dymin,
                self.dxmax,
                self.dymax,
                self.dxc,
                self.dyc,
                self.w_union,
                self.h_union,
            ]
        )

    @classmethod
    def from_vector(cls, values) -> "SpatialRelation":
        arr = np.asarray(values, dtype=np.float64).reshape(-1)
        if arr.size != 8:
            raise ValueError(f"expected 8 components, got {arr.size}")
        return cls(*[float(v) for v in arr])

    def scaled(self, factor: float) -> "SpatialRelation":
        """Every component multiplied by ``factor`` (unit change)."""
        return SpatialRelation(
            self.dxmin * factor,
            self.dymin * factor,
            self.dxmax * factor,
            self.dymax * factor,
            self.dxc * factor,
            self.dyc * factor,
            self.w_union * factor,
            self.h_union * factor,
        )


def spatial_relation(
    ped: BoundingBox,
    obj: BoundingBox,
    frame_size: tuple[float, float] | None = None,
) -> SpatialRelation:
    """Encode where ``obj`` sits relative to ``ped``.

    With frame_size=(width, height) the x components (and w_union) are divided
    by width and the y components (and h_union) by height; by default raw
    pixel differences are returned.
    """
    u = ped.union(obj)
    pcx, pcy = ped.center
    ocx, ocy = obj.center
    sx = sy = 1.0
    if frame_size is not None:
        sx, sy = float(frame_size[0]), float(frame_size[1])
        if sx <= 0 or sy <= 0:
            raise ValueError(f"frame_size must be positive, got {frame_size}")
    return SpatialRelation(
        dxmin=(obj.xmin - ped.xmin) / sx,
        dymin=(obj.ymin - ped.ymin) / sy,
        dxmax=(obj.xmax - ped.xmax) / sx,
        dymax=(obj.ymax - ped.ymax) / sy,
        dxc=(ocx - pcx) / sx,
        dyc=(ocy - pcy) / sy,
        w_union=u.width / sx,
        h_union=u.height / sy,
    )


def as_vector(s: SpatialRelation) -> Tensor:
    return s.as_vector()


@dataclass(frozen=True)
class FocusRegion:
    """Trapezoid ahead of the ego vehicle, symmetric about ``center_x``.

    ``near_y`` is the image row closest to the camera (larger y), ``far_y``
    the row farthest ahead; the half width interpolates linearly between the
    two rows. Membership is closed (boundary points are inside).
    """

    near_y: float
    far_y: float
    near_half_width: float
    far_half_width: float
    center_x: float

    def __post_init__(self):
        _require_finite(
            "FocusRegion",
            self.near_y,
            self.far_y,
            self.near_half_width,
            self.far_half_width,
            self.center_x,
        )
        if self.near_y <= self.far_y:
            raise ValueError("near_y must be strictly below far_y in image coordinates")
        if self.near_half_width <= 0 or self.far_half_width <= 0:
            raise ValueError("half widths must be positive")

    def half_width_at(self, y: float) -> float:
        frac = (y - self.far_y) / (self.near_y - self.far_y)
        return self.far_half_width + frac * (self.near_half_width - self.far_half_width)


def in_focus_region(box: BoundingBox, region: FocusRegion) -> bool:
    """True when the box's bottom-center point lies inside the trapezoid."""
    x, y = box.bottom_center
    if y < region.far_y or y > region.near_y:
        return False
    return abs(x - region.center_x) <= region.half_width_at(y)


def _as_feature(name: str, values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{name}: feature vector is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: feature vector has non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class ObjectObservation:
    """One detected scene object in one frame."""

    category: ObjectCategory
    box: BoundingBox
    feature: np.ndarray
    camera_offset_x: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "feature", _as_feature("object feature", self.feature))
        _require_finite("camera_offset_x", self.camera_offset_x)

    @property
    def feature_width(self) -> int:
        return int(self.feature.size)

    def aligned_box(self) -> BoundingBox:
        """Box shifted into the reference camera frame by camera_offset_x."""
        if self.camera_offset_x == 0.0:
            return self.box
        return self.box.shift_x(self.camera_offset_x)


@dataclass(frozen=True, eq=False)
class FrameObservation:
    """Pedestrian plus surrounding objects at one timestamp."""

    timestamp_index: int
    pedestrian_box: BoundingBox
    pedestrian_feature: np.ndarray
    objects: tuple[ObjectObservation, ...]
    crossing_label: int

    def __post_init__(self):
        object.__setattr__(
            self, "pedestrian_feature", _as_feature("pedestrian feature", self.pedestrian_feature)
        )
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.crossing_label not in (0, 1):
            raise ValueError(f"crossing_label must be 0 or 1, got {self.crossing_label!r}")


@dataclass(frozen=True, eq=False)
class Scenario:
    """A pedestrian track: consecutive frames at a fixed rate."""

    id: str
    frames: tuple[FrameObservation, ...]
    fps: float

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise ValueError(f"scenario {self.id!r} has no frames")
        if not (math.isfinite(self.fps) and self.fps > 0):
            raise ValueError(f"scenario {self.id!r}: fps must be positive, got {self.fps!r}")
        last = None
        for frame in self.frames:
            if last is not None and frame.timestamp_index <= last:
                raise ValueError(
                    f"scenario {self.id!r}: timestamps must increase strictly "
                    f"({last} then {frame.timestamp_index})"
                )
            last = frame.timestamp_index
        width = self.frames[0].pedestrian_feature.size
        for frame in self.frames:
            if frame.pedestrian_feature.size != width:
                raise ValueError(f"scenario {self.id!r}: pedestrian feature width varies")
            for obj in frame.objects:
                if obj.feature_width != width:
                    raise ValueError(
                        f"scenario {self.id!r}: object feature width {obj.feature_width} "
                        f"!= pedestrian width {width}"
                    )

    @property
    def feature_width(self) -> int:
        return int(self.frames[0].pedestrian_feature.size)

    def labels(self) -> list[int]:
        return [f.crossing_label for f in self.frames]


@dataclass(frozen=True, eq=False)
class EgoFrameObservation:
    """Ego-camera frame: whole-scene feature plus entity observations.

    ``entities`` are the graph's peripheral nodes (vehicles, riders, signs,
    pedestrians alike); ``pedestrian_boxes`` single out the pedestrians used
    for region-occupancy labeling.
    """

    timestamp_index: int
    ego_feature: np.ndarray
    entities: tuple[ObjectObservation, ...]
    pedestrian_boxes: tuple[BoundingBox, ...]

    def __post_init__(self):
        object.__setattr__(self, "ego_feature", _as_feature("ego feature", self.ego_feature))
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "pedestrian_boxes", tuple(self.pedestrian_boxes))


@dataclass(frozen=True, eq=False)
class EgoScenario:
    id: str
    frames: tuple[EgoFrameObservation, ...]
    fps: float

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise ValueError(f"ego scenario {self.id!r} has no frames")
        if not (math.isfinite(self.fps) and self.fps > 0):
            raise ValueError(f"ego scenario {self.id!r}: fps must be positive")


def region_crossing_labels(scenario: EgoScenario, region: FocusRegion) -> list[int]:
    """Per-frame label: 1 iff any pedestrian's ground point is in the region."""
    return [
        1 if any(in_focus_region(b, region) for b in frame.pedestrian_boxes) else 0
        for frame in scenario.frames
    ]
