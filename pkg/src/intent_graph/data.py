"""Line-delimited scenario files and the synthetic scenario generator.

File format: one JSON object per line,

    {"id": str, "fps": float, "frames": [
        {"t": int,
         "ped": {"box": [xmin, ymin, xmax, ymax], "feat": [...]},
         "objects": [{"cat": str, "box": [...], "feat": [...], "cam_dx": float}],
         "label": 0 | 1}]}

Records are parsed strictly: unknown keys, malformed values, and labels
outside {0,1} raise RecordParseError with the line number; feature-width
drift raises FeatureWidthError; non-increasing timestamps raise
TimestampOrderError. Serialization is deterministic, so re-serializing a
loaded file reproduces it byte for byte.

Synthetic scenarios and the labeling rule
-----------------------------------------
Each scenario contains one static crosswalk, parked vehicles, and one
pedestrian that walks toward the crosswalk, parallel to it, or stands
still. The per-frame crossing label is 1 iff all three hold:

  1. |dxc| < theta_x, where dxc = crosswalk_center_x - ped_center_x for the
     crosswalk nearest in |dxc| (no crosswalk means label 0), with
     theta_x = theta_x_frac * frame_width;
  2. the pedestrian's x velocity points toward that crosswalk: dxc * vx > 0,
     where vx is the difference of consecutive pedestrian box centers
     (frame 0 reuses the first forward difference; a one-frame scenario
     has vx = 0);
  3. no vehicle-category box center lies within theta_v pixels (Euclidean)
     of the pedestrian center, theta_v = theta_v_frac * frame_width.

The rule reads nothing but boxes, so ``oracle_labels`` can recompute every
label from a loaded file. Per-scenario RNG streams are derived from the
master seed with splitmix64, so generation is order-independent and
regenerating with the same config is byte-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .configs import ConfigError, from_mapping, to_plain_dict
from .scene import (
    CROSSWALK_CATEGORIES,
    VEHICLE_CATEGORIES,
    BoundingBox,
    FrameObservation,
    ObjectCategory,
    ObjectObservation,
    Scenario,
    category_one_hot,
)


class SequenceFileError(Exception):
    """Base for data-file problems; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class RecordParseError(SequenceFileError):
    """A record is not valid JSON or violates the schema."""


class FeatureWidthError(SequenceFileError):
    """Feature vectors change width within a file or record."""


class TimestampOrderError(SequenceFileError):
    """Frame timestamps fail to increase strictly."""


def _require(condition: bool, message: str, line: int, kind=RecordParseError):
    if not condition:
        raise kind(message, line)


def _check_keys(obj: dict, required: set[str], optional: set[str], what: str, line: int):
    _require(isinstance(obj, dict), f"{what} must be an object", line)
    missing = required - set(obj)
    _require(not missing, f"{what} missing key(s) {sorted(missing)}", line)
    unknown = set(obj) - required - optional
    _require(not unknown, f"{what} has unknown key(s) {sorted(unknown)}", line)


def _number(value, what: str, line: int) -> float:
    _require(
        isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value),
        f"{what} must be a finite number, got {value!r}",
        line,
    )
    return float(value)


def _number_list(value, what: str, line: int) -> list[float]:
    _require(isinstance(value, list) and value, f"{what} must be a non-empty array", line)
    return [_number(v, what, line) for v in value]


def _box(value, what: str, line: int) -> BoundingBox:
    nums = _number_list(value, what, line)
    _require(len(nums) == 4, f"{what} must have 4 entries, got {len(nums)}", line)
    try:
        return BoundingBox(*nums)
    except ValueError as exc:
        raise RecordParseError(f"{what}: {exc}", line) from exc


def _parse_frame(obj, line: int, width: list[int | None]) -> FrameObservation:
    _check_keys(obj, {"t", "ped", "objects", "label"}, set(), "frame", line)
    t = obj["t"]
    _require(isinstance(t, int) and not isinstance(t, bool), f"t must be an integer, got {t!r}", line)
    label = obj["label"]
    _require(label in (0, 1) and not isinstance(label, bool), f"label must be 0 or 1, got {label!r}", line)

    ped = obj["ped"]
    _check_keys(ped, {"box", "feat"}, set(), "ped", line)
    ped_box = _box(ped["box"], "ped.box", line)
    ped_feat = _number_list(ped["feat"], "ped.feat", line)

    def check_width(n: int, what: str):
        if width[0] is None:
            width[0] = n
        elif n != width[0]:
            raise FeatureWidthError(f"{what} has width {n}, file uses width {width[0]}", line)

    check_width(len(ped_feat), "ped.feat")

    objects = obj["objects"]
    _require(isinstance(objects, list), "objects must be an array", line)
    parsed = []
    for entry in objects:
        _check_keys(entry, {"cat", "box", "feat"}, {"cam_dx"}, "object", line)
        cat = entry["cat"]
        _require(isinstance(cat, str), f"cat must be a string, got {cat!r}", line)
        try:
            category = ObjectCategory.from_name(cat)
        except ValueError as exc:
            raise RecordParseError(str(exc), line) from exc
        feat = _number_list(entry["feat"], "object feat", line)
        check_width(len(feat), "object feat")
        cam_dx = _number(entry.get("cam_dx", 0.0), "cam_dx", line)
        parsed.append(
            ObjectObservation(
                category=category,
                box=_box(entry["box"], "object box", line),
                feature=np.array(feat),
                camera_offset_x=cam_dx,
            )
        )
    return FrameObservation(
        timestamp_index=t,
        pedestrian_box=ped_box,
        pedestrian_feature=np.array(ped_feat),
        objects=tuple(parsed),
        crossing_label=label,
    )


def _parse_record(text: str, line: int, width: list[int | None]) -> Scenario:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RecordParseError(f"invalid JSON: {exc.msg}", line) from exc
    _check_keys(obj, {"id", "fps", "frames"}, set(), "record", line)
    _require(isinstance(obj["id"], str) and obj["id"], "id must be a non-empty string", line)
    fps = _number(obj["fps"], "fps", line)
    _require(fps > 0, f"fps must be positive, got {fps}", line)
    frames_raw = obj["frames"]
    _require(isinstance(frames_raw, list) and frames_raw, "frames must be a non-empty array", line)

    frames = [_parse_frame(f, line, width) for f in frames_raw]
    last = None
    for frame in frames:
        if last is not None and frame.timestamp_index <= last:
            raise TimestampOrderError(
                f"timestamps must increase strictly ({last} then {frame.timestamp_index})", line
            )
        last = frame.timestamp_index
    try:
        return Scenario(id=obj["id"], frames=tuple(frames), fps=fps)
    except ValueError as exc:
        raise RecordParseError(str(exc), line) from exc


def load(path, min_frames: int | None = None) -> list[Scenario]:
    """Read scenarios; optionally require at least min_frames frames each."""
    scenarios: list[Scenario] = []
    width: list[int | None] = [None]
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            scenario = _parse_record(raw, line_no, width)
            if min_frames is not None and len(scenario.frames) < min_frames:
                raise RecordParseError(
                    f"scenario {scenario.id!r} has {len(scenario.frames)} frames, "
                    f"need at least {min_frames}",
                    line_no,
                )
            scenarios.append(scenario)
    return scenarios


def scenario_to_record(s: Scenario) -> dict:
    return {
        "id": s.id,
        "fps": s.fps,
        "frames": [
            {
                "t": f.timestamp_index,
                "ped": {"box": f.pedestrian_box.as_list(), "feat": f.pedestrian_feature.tolist()},
                "objects": [
                    {
                        "cat": o.category.value,
                        "box": o.box.as_list(),
                        "feat": o.feature.tolist(),
                        "cam_dx": o.camera_offset_x,
                    }
                    for o in f.objects
                ],
                "label": f.crossing_label,
            }
            for f in s.frames
        ],
    }


def serialize(scenarios: Sequence[Scenario]) -> str:
    return "".join(json.dumps(scenario_to_record(s), separators=(",", ":")) + "\n" for s in scenarios)


def write_dataset(path, scenarios: Sequence[Scenario], config: "SynthConfig | None" = None) -> None:
    """Write scenarios as JSONL; with a config, also drop a provenance sidecar."""
    Path(path).write_text(serialize(scenarios), encoding="utf-8")
    if config is not None:
        sidecar = {
            "format": "sequence-jsonl-v1",
            "count": len(scenarios),
            "generator": config.to_dict(),
        }
        Path(str(path) + ".meta.json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")


_MASK64 = (1 << 64) - 1


def splitmix64(seed: int, index: int) -> int:
    """Derive the ``index``-th independent 64-bit stream seed from ``seed``.

    Standard splitmix64 finalizer applied to seed + index * golden-gamma, all
    modulo 2**64; documented so external tooling can reproduce any single
    scenario without generating the ones before it.
    """
    z = (seed + index * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1EE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


# Walker-kind mix (toward / parallel / still) and feature-projection tags.
_TOWARD_PROB = 0.7
_PARALLEL_PROB = 0.15
_OBJ_PROJ_TAG = 0x0BEC7
_PED_PROJ_TAG = 0x9ED


@dataclass(frozen=True)
class SynthConfig:
    """Geometry and size of a synthetic draw; lengths are pixels, px/frame."""

    n_scenarios: int = 32
    frames_per_scenario: int = 16
    D: int = 16
    seed: int = 0
    frame_width: float = 1280.0
    frame_height: float = 720.0
    fps: float = 10.0
    crosswalk_center_range: tuple[float, float] = (0.3, 0.7)
    vehicle_count_range: tuple[int, int] = (0, 3)
    ped_speed_range: tuple[float, float] = (3.0, 14.0)
    theta_x_frac: float = 0.15
    theta_v_frac: float = 0.10

    def __post_init__(self):
        object.__setattr__(self, "crosswalk_center_range", tuple(self.crosswalk_center_range))
        object.__setattr__(self, "vehicle_count_range", tuple(self.vehicle_count_range))
        object.__setattr__(self, "ped_speed_range", tuple(self.ped_speed_range))
        for name, minimum in (("n_scenarios", 1), ("frames_per_scenario", 2), ("D", 1), ("seed", 0)):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
                raise ConfigError(f"{name} must be an integer >= {minimum}, got {v!r}")
        for name in ("frame_width", "frame_height", "fps"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive, got {v!r}")
        lo, hi = self.crosswalk_center_range
        if not (0 <= lo <= hi <= 1):
            raise ConfigError(f"crosswalk_center_range must satisfy 0 <= lo <= hi <= 1, got {self.crosswalk_center_range}")
        vlo, vhi = self.vehicle_count_range
        if not (isinstance(vlo, int) and isinstance(vhi, int) and 0 <= vlo <= vhi):
            raise ConfigError(f"vehicle_count_range must be integers 0 <= lo <= hi, got {self.vehicle_count_range}")
        slo, shi = self.ped_speed_range
        if not (0 < slo <= shi):
            raise ConfigError(f"ped_speed_range must satisfy 0 < lo <= hi, got {self.ped_speed_range}")
        for name in ("theta_x_frac", "theta_v_frac"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0 < v < 1):
                raise ConfigError(f"{name} must lie in (0, 1), got {v!r}")

    @classmethod
    def from_dict(cls, mapping: Mapping) -> "SynthConfig":
        return from_mapping(cls, mapping, where="synth.")

    def to_dict(self) -> dict:
        return to_plain_dict(self)


def oracle_thresholds(cfg: SynthConfig) -> tuple[float, float]:
    return cfg.theta_x_frac * cfg.frame_width, cfg.theta_v_frac * cfg.frame_width


def _ped_x_velocities(frames: Sequence[FrameObservation]) -> list[float]:
    centers = [f.pedestrian_box.center[0] for f in frames]
    if len(centers) == 1:
        return [0.0]
    diffs = [centers[i] - centers[i - 1] for i in range(1, len(centers))]
    return [diffs[0], *diffs]


def oracle_labels(scenario: Scenario, theta_x: float, theta_v: float) -> list[int]:
    """Recompute every crossing label from boxes alone (see module docstring)."""
    velocities = _ped_x_velocities(scenario.frames)
    labels = []
    for frame, vx in zip(scenario.frames, velocities):
        pcx, pcy = frame.pedestrian_box.center
        crosswalk_dxc = None
        for obj in frame.objects:
            if obj.category in CROSSWALK_CATEGORIES:
                dxc = obj.aligned_box().center[0] - pcx
                if crosswalk_dxc is None or abs(dxc) < abs(crosswalk_dxc):
                    crosswalk_dxc = dxc
        if crosswalk_dxc is None or not (abs(crosswalk_dxc) < theta_x and crosswalk_dxc * vx > 0):
            labels.append(0)
            continue
        blocked = False
        for obj in frame.objects:
            if obj.category in VEHICLE_CATEGORIES:
                ocx, ocy = obj.aligned_box().center
                if math.hypot(ocx - pcx, ocy - pcy) < theta_v:
                    blocked = True
                    break
        labels.append(0 if blocked else 1)
    return labels


_VEHICLE_CHOICES = tuple(sorted(VEHICLE_CATEGORIES, key=lambda c: c.value))
_DESCRIPTOR_LEN = 8


def _embedding(cfg: SynthConfig, tag: int) -> np.ndarray:
    """Fixed dataset-wide linear embedding of 8-dim descriptors into R^D.

    For D >= 8 the descriptor occupies the leading coordinates unchanged
    (zero padding); smaller D falls back to a seeded random projection so
    tiny desk-scale configs still work.
    """
    if cfg.D >= _DESCRIPTOR_LEN:
        e = np.zeros((_DESCRIPTOR_LEN, cfg.D))
        e[:, :_DESCRIPTOR_LEN] = np.eye(_DESCRIPTOR_LEN)
        return e
    rng = np.random.default_rng(splitmix64(cfg.seed, tag))
    return rng.standard_normal((_DESCRIPTOR_LEN, cfg.D)) / math.sqrt(_DESCRIPTOR_LEN)


def _object_feature(cfg: SynthConfig, p_obj: np.ndarray, category: ObjectCategory, box: BoundingBox) -> np.ndarray:
    cx, cy = box.center
    desc = np.array(
        [
            1.0 if category in CROSSWALK_CATEGORIES else 0.0,
            1.0 if category in VEHICLE_CATEGORIES else 0.0,
            cx / cfg.frame_width,
            cy / cfg.frame_height,
            box.width / cfg.frame_width,
            box.height / cfg.frame_height,
            category.index / len(ObjectCategory),
            1.0,
        ]
    )
    return desc @ p_obj


def _ped_feature(cfg: SynthConfig, p_ped: np.ndarray, box: BoundingBox, vx: float, vy: float) -> np.ndarray:
    v_ref = cfg.ped_speed_range[1]
    cx, cy = box.center
    desc = np.array(
        [
            cx / cfg.frame_width,
            cy / cfg.frame_height,
            box.width / cfg.frame_width,
            box.height / cfg.frame_height,
            vx / v_ref,
            vy / v_ref,
            box.bottom_center[1] / cfg.frame_height,
            1.0,
        ]
    )
    return desc @ p_ped


def _box_at(cx: float, cy: float, w: float, h: float) -> BoundingBox:
    return BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def _margins_ok(cfg: SynthConfig, cw_cx, vehicles, pcx, pcy, vx, vy) -> bool:
    """Reject draws whose labels hinge on near-threshold geometry.

    Every frame must sit decisively on one side of each oracle clause:
    |dxc| clear of theta_x, dxc clear of zero (approach sign), and vehicle
    distance clear of theta_v. Without this, held-out labels flip on
    sub-pixel differences no model could resolve.
    """
    theta_x, theta_v = oracle_thresholds(cfg)
    m_zero = 0.01 * cfg.frame_width
    m_near = 0.02 * cfg.frame_width
    m_veh = 0.03 * cfg.frame_width
    for t in range(cfg.frames_per_scenario):
        dxc = cw_cx - (pcx + t * vx)
        if abs(dxc) < m_zero and vx != 0.0:
            return False
        if abs(abs(dxc) - theta_x) < m_near:
            return False
        py = pcy + t * vy
        for _, _, _, vcx, vcy, _ in vehicles:
            if abs(math.hypot(vcx - (pcx + t * vx), vcy - py) - theta_v) < m_veh:
                return False
    return True


def _generate_one(cfg: SynthConfig, index: int, p_obj: np.ndarray, p_ped: np.ndarray) -> Scenario:
    rng = np.random.default_rng(splitmix64(cfg.seed, index + 1))
    w_frame, h_frame = cfg.frame_width, cfg.frame_height
    theta_x, theta_v = oracle_thresholds(cfg)
    slo, shi = cfg.ped_speed_range
    lo, hi = cfg.crosswalk_center_range
    vlo, vhi = cfg.vehicle_count_range

    # Redraw the whole scene until no label sits on a knife edge; the loop is
    # part of the seeded stream, so generation stays deterministic.
    for _ in range(200):
        cw_cat = ObjectCategory.CROSSWALK_ZEBRA if rng.random() < 0.5 else ObjectCategory.CROSSWALK_PLAIN
        cw_cx = rng.uniform(lo, hi) * w_frame
        cw_w = 0.22 * w_frame
        cw_ymin = 0.66 * h_frame
        cw_box = BoundingBox(cw_cx - cw_w / 2, cw_ymin, cw_cx + cw_w / 2, cw_ymin + 0.08 * h_frame)

        # Vehicles: parked, so future occlusion is inferable from any one frame.
        n_veh = int(rng.integers(vlo, vhi + 1))
        vehicles = []
        for _ in range(n_veh):
            cat = _VEHICLE_CHOICES[int(rng.integers(0, len(_VEHICLE_CHOICES)))]
            vw = rng.uniform(0.10, 0.16) * w_frame
            vcx = rng.uniform(0.0, 1.0) * w_frame
            vcy = rng.uniform(0.55, 0.75) * h_frame
            vehicles.append((cat, vw, 0.16 * h_frame, vcx, vcy, 0.0))

        # Pedestrian: toward the crosswalk, parallel to it, or standing still.
        pw = 0.03 * w_frame
        ph = 0.17 * h_frame
        pcy = rng.uniform(0.70, 0.85) * h_frame - ph / 2
        kind = rng.random()
        if kind < _TOWARD_PROB:
            side = -1.0 if rng.random() < 0.5 else 1.0
            pcx = cw_cx + side * rng.uniform(0.04, 0.18) * w_frame
            vx = -side * rng.uniform(slo, shi)
            vy = 0.0
        elif kind < _TOWARD_PROB + _PARALLEL_PROB:
            pcx = rng.uniform(0.1, 0.9) * w_frame
            vx = 0.0
            vy = rng.uniform(slo, shi) / 2 * (1.0 if rng.random() < 0.5 else -1.0)
        else:
            pcx = rng.uniform(0.1, 0.9) * w_frame
            vx = 0.0
            vy = 0.0
        if _margins_ok(cfg, cw_cx, vehicles, pcx, pcy, vx, vy):
            break

    frames = []
    for t in range(cfg.frames_per_scenario):
        ped_box = _box_at(pcx + t * vx, pcy + t * vy, pw, ph)
        objects = [
            ObjectObservation(
                category=cw_cat, box=cw_box, feature=_object_feature(cfg, p_obj, cw_cat, cw_box)
            )
        ]
        veh_boxes = []
        for cat, vw, vh, vcx, vcy, vvx in vehicles:
            box = _box_at(vcx + t * vvx, vcy, vw, vh)
            veh_boxes.append(box)
            objects.append(
                ObjectObservation(category=cat, box=box, feature=_object_feature(cfg, p_obj, cat, box))
            )

        # Label straight from the rule; vx here is the true walker velocity.
        pcx_t, pcy_t = ped_box.center
        dxc = cw_box.center[0] - pcx_t
        near = abs(dxc) < theta_x
        toward = dxc * vx > 0
        clear = all(
            math.hypot(b.center[0] - pcx_t, b.center[1] - pcy_t) >= theta_v for b in veh_boxes
        )
        label = 1 if (near and toward and clear) else 0

        frames.append(
            FrameObservation(
                timestamp_index=t,
                pedestrian_box=ped_box,
                pedestrian_feature=_ped_feature(cfg, p_ped, ped_box, vx, vy),
                objects=tuple(objects),
                crossing_label=label,
            )
        )
    return Scenario(id=f"synth-{cfg.seed}-{index:05d}", frames=tuple(frames), fps=cfg.fps)


def generate_synthetic(cfg: SynthConfig) -> list[Scenario]:
    """Draw cfg.n_scenarios labeled scenarios (see module docstring)."""
    p_obj = _embedding(cfg, _OBJ_PROJ_TAG)
    p_ped = _embedding(cfg, _PED_PROJ_TAG)
    return [_generate_one(cfg, i, p_obj, p_ped) for i in range(cfg.n_scenarios)]


def label_prevalence(scenarios: Sequence[Scenario]) -> float:
    """Fraction of positive labels over every frame of every scenario."""
    total = sum(len(s.frames) for s in scenarios)
    positive = sum(f.crossing_label for s in scenarios for f in s.frames)
    return positive / total if total else 0.0


def split(dataset: Sequence[Scenario], train_fraction: float, seed: int) -> tuple[list[Scenario], list[Scenario]]:
    """Seeded shuffle then disjoint, exhaustive split by scenario."""
    if not (0.0 <= train_fraction <= 1.0):
        raise ValueError(f"train_fraction must lie in [0, 1], got {train_fraction}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    cut = int(math.floor(train_fraction * len(dataset)))
    train = [dataset[int(i)] for i in order[:cut]]
    test = [dataset[int(i)] for i in order[cut:]]
    return train, test
