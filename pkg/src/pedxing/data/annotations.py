"""Line-delimited JSON annotation records, one pedestrian-frame per line.

Each line is an object with keys ``video_id``, ``frame``, ``ped_id``,
``bbox`` ([x1, y1, x2, y2] pixels), ``keypoints`` (18 × [x, y, visible]),
``cross`` (0/1), ``speed`` (class index), ``image`` (path relative to the
annotation file) and ``size`` ([W, H] pixels).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..exceptions import AnnotationParseError
from ..heads import NUM_KEYPOINTS

REQUIRED_KEYS = ("video_id", "frame", "ped_id", "bbox", "keypoints", "cross", "speed",
                 "image", "size")


class AnnotationWarning(UserWarning):
    """A record was repaired (e.g. a clamped box) rather than rejected."""


@dataclass(frozen=True)
class AnnotationRecord:
    video_id: str
    frame: int
    ped_id: str
    bbox: tuple
    keypoints: tuple  # 18 × (x, y, visible)
    cross: int
    speed: int
    image: str
    size: tuple  # (W, H)

    @property
    def key(self):
        return (self.video_id, self.ped_id)

    def keypoint_array(self):
        return np.asarray(self.keypoints, dtype=np.float64).reshape(NUM_KEYPOINTS, 3)

    def to_dict(self):
        return {
            "video_id": self.video_id, "frame": self.frame, "ped_id": self.ped_id,
            "bbox": list(self.bbox), "keypoints": [list(k) for k in self.keypoints],
            "cross": self.cross, "speed": self.speed, "image": self.image,
            "size": list(self.size),
        }


def _number(v, what):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        raise ValueError(f"{what} must be a finite number, got {v!r}")
    return v


def record_from_dict(obj):
    """Validate one decoded object. Raises ``ValueError`` on hard errors."""
    if not isinstance(obj, dict):
        raise ValueError("record is not an object")
    missing = [k for k in REQUIRED_KEYS if k not in obj]
    if missing:
        raise ValueError(f"missing required field(s): {', '.join(missing)}")

    size = obj["size"]
    if not isinstance(size, list) or len(size) != 2:
        raise ValueError("size must be [W, H]")
    W, H = (int(_number(v, "size")) for v in size)
    if W <= 0 or H <= 0:
        raise ValueError(f"size must be positive, got {size}")

    bbox = obj["bbox"]
    if not isinstance(bbox, list) or len(bbox) != 4:
        raise ValueError("bbox must be [x1, y1, x2, y2]")
    x1, y1, x2, y2 = (float(_number(v, "bbox")) for v in bbox)
    if not (x1 < x2 and y1 < y2):
        raise ValueError(f"bbox must satisfy x1<x2 and y1<y2, got {bbox}")
    clamped = (min(max(x1, 0.0), W), min(max(y1, 0.0), H),
               min(max(x2, 0.0), W), min(max(y2, 0.0), H))
    if clamped != (x1, y1, x2, y2):
        if not (clamped[0] < clamped[2] and clamped[1] < clamped[3]):
            raise ValueError(f"bbox {bbox} lies outside the {W}x{H} image")
        warnings.warn(f"bbox {bbox} clamped to image bounds {W}x{H}", AnnotationWarning,
                      stacklevel=3)

    kps = obj["keypoints"]
    if not isinstance(kps, list) or len(kps) != NUM_KEYPOINTS:
        raise ValueError(f"keypoints must hold {NUM_KEYPOINTS} [x, y, visible] triples")
    points = []
    for kp in kps:
        if not isinstance(kp, list) or len(kp) != 3:
            raise ValueError("each keypoint must be [x, y, visible]")
        x, y, v = (_number(c, "keypoint") for c in kp)
        v = 1 if v else 0
        if v and not (0 <= x <= W and 0 <= y <= H):
            warnings.warn(f"visible keypoint ({x}, {y}) clamped to image bounds",
                          AnnotationWarning, stacklevel=3)
            x, y = min(max(x, 0), W), min(max(y, 0), H)
        points.append((float(x), float(y), v))

    cross = obj["cross"]
    if cross not in (0, 1) or isinstance(cross, bool):
        raise ValueError(f"cross must be 0 or 1, got {cross!r}")
    speed = obj["speed"]
    if not isinstance(speed, int) or isinstance(speed, bool) or speed < 0:
        raise ValueError(f"speed must be a non-negative integer class, got {speed!r}")
    frame = obj["frame"]
    if not isinstance(frame, int) or isinstance(frame, bool) or frame < 0:
        raise ValueError(f"frame must be a non-negative integer, got {frame!r}")

    return AnnotationRecord(
        video_id=str(obj["video_id"]), frame=frame, ped_id=str(obj["ped_id"]),
        bbox=clamped, keypoints=tuple(points), cross=int(cross), speed=speed,
        image=str(obj["image"]), size=(W, H))


def parse_annotation_lines(lines):
    records, problems = [], []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(record_from_dict(json.loads(line)))
        except (ValueError, TypeError) as exc:
            problems.append((lineno, str(exc)))
    if problems:
        raise AnnotationParseError(problems)
    return records


def parse_annotations(path):
    """Read and validate every record; all bad lines are reported together."""
    with open(path, encoding="utf-8") as fh:
        return parse_annotation_lines(fh)


def write_annotations(records, path):
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), separators=(",", ":")) + "\n")
