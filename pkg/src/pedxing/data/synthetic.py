"""Synthetic JAAD-style scenes: stick-figure pedestrians beside a road.

Crossing pedestrians walk toward the road (which always lies on the right of
the frame) and face it; non-crossing pedestrians walk away from it or stand
still, facing away. Keypoints follow a fixed body plan inside the box, so
pose targets are correlated with the crossing label. The ego-vehicle speed
class follows a scripted per-video profile whose distribution depends on the
label.

``easy`` scenes have clean backgrounds, fast walkers and a face marker;
``hard`` scenes add texture and pixel noise, slow the walkers down, lower the
figure contrast and drop the marker, leaving posture as the main visual cue.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from ..heads import NUM_KEYPOINTS
from .annotations import AnnotationRecord, write_annotations
from .imaging import bilinear_resize

ANNOTATION_FILE = "annotations.jsonl"
MANIFEST_FILE = "manifest.json"
DIFFICULTIES = ("easy", "hard")

# Body plan for a figure facing +x: (horizontal offset in box widths from the
# centre, vertical offset in box heights from the top), COCO-18 order.
_BODY_PLAN = np.array([
    (0.28, 0.09),   # nose
    (0.00, 0.20),   # neck
    (-0.10, 0.22),  # right shoulder
    (0.18, 0.34),   # right elbow
    (0.40, 0.40),   # right wrist
    (0.10, 0.22),   # left shoulder
    (-0.06, 0.38),  # left elbow
    (-0.02, 0.52),  # left wrist
    (-0.06, 0.55),  # right hip
    (-0.06, 0.76),  # right knee
    (-0.08, 0.97),  # right ankle
    (0.06, 0.55),   # left hip
    (0.06, 0.76),   # left knee
    (0.08, 0.97),   # left ankle
    (0.18, 0.06),   # right eye
    (0.24, 0.06),   # left eye
    (-0.04, 0.08),  # right ear
    (0.02, 0.08),   # left ear
])
_LIMBS = [(1, 2), (2, 3), (3, 4), (1, 5), (5, 6), (6, 7), (1, 8), (1, 11),
          (8, 9), (9, 10), (11, 12), (12, 13)]
# swing amplitude (box widths) for knees/ankles while walking
_SWING = {9: -1.0, 10: -2.0, 12: 1.0, 13: 2.0}

# Vehicle speed profiles: list of (fraction of track, class index); classes are
# 0 stopped, 1 slow, 2 fast, 3 decelerating, 4 accelerating.
_PROFILES = [
    [(1.0, 0)],
    [(0.5, 3), (0.5, 0)],
    [(1.0, 1)],
    [(1.0, 2)],
    [(0.5, 4), (0.5, 2)],
]
_PROFILE_P_CROSS = np.array([0.3, 0.3, 0.2, 0.1, 0.1])
_PROFILE_P_NOT = _PROFILE_P_CROSS[::-1]

_SETTINGS = {
    "easy": dict(speed=(1.0, 1.6), texture=12.0, noise=0.0, jitter=0.0, contrast=1.0,
                 marker=True, occlusion=0.0),
    "hard": dict(speed=(0.4, 0.9), texture=25.0, noise=8.0, jitter=0.6, contrast=0.6,
                 marker=False, occlusion=0.05),
}


@dataclass
class SyntheticData:
    records: list
    images: dict = field(default_factory=dict)  # relative path -> uint8 [H,W,3]
    manifest: dict = field(default_factory=dict)


def _background(rng, W, H, road_x, texture):
    grid = rng.normal(0.0, 1.0, size=(7, 9))
    tex = bilinear_resize(grid, H, W) * texture
    base = np.empty((H, W, 3))
    base[:] = (150.0, 150.0, 135.0)
    base[:, road_x:] = (80.0, 80.0, 85.0)
    img = base + tex[:, :, None]
    img[:, road_x:road_x + 2] = (200.0, 200.0, 190.0)  # curb
    lane = road_x + (W - road_x) // 2
    for y in range(0, H, 12):
        img[y:y + 6, lane:lane + 2] = (230.0, 230.0, 230.0)
    return img


def _speed_classes(rng, label, length, n_classes):
    p = _PROFILE_P_CROSS if label else _PROFILE_P_NOT
    profile = _PROFILES[rng.choice(len(_PROFILES), p=p)]
    classes = []
    for frac, cls in profile:
        classes += [min(cls, n_classes - 1)] * int(round(frac * length))
    classes = (classes + [classes[-1]] * length)[:length]
    return classes


def _render_track(seed, index, W, H, difficulty, n_speed_classes):
    cfg = _SETTINGS[difficulty]
    rng = np.random.default_rng([seed, index])
    label = index % 2
    video_id = f"syn{index:04d}"
    length = int(rng.integers(24, 41))
    road_x = int(0.62 * W)
    ped_h = rng.uniform(0.36, 0.46) * H
    ped_w = 0.4 * ped_h
    foot_y = rng.uniform(0.78, 0.95) * H
    vx = rng.uniform(*cfg["speed"])

    if label:
        facing, x0 = 1.0, rng.uniform(0.15, 0.32) * W
    else:
        facing, x0 = -1.0, rng.uniform(0.35, 0.5) * W
        vx = 0.0 if rng.random() < 0.5 else -vx

    body = np.array([rng.uniform(40, 200) for _ in range(3)])
    background = _background(rng, W, H, road_x, cfg["texture"])
    figure = background.mean(axis=(0, 1)) + cfg["contrast"] * (body - background.mean(axis=(0, 1)))
    speeds = _speed_classes(rng, label, length, n_speed_classes)

    records, images = [], {}
    for t in range(length):
        cx = x0 + vx * t + rng.normal(0, cfg["jitter"]) if cfg["jitter"] else x0 + vx * t
        cx = float(np.clip(cx, ped_w / 2 + 1, W - ped_w / 2 - 1))
        top = foot_y - ped_h + (rng.normal(0, cfg["jitter"]) if cfg["jitter"] else 0.0)
        phase = np.sin(2 * np.pi * t / 12.0) * 0.08 if vx != 0 else 0.0

        offsets = _BODY_PLAN.copy()
        for k, amp in _SWING.items():
            offsets[k, 0] += amp * phase
        xs = cx + facing * offsets[:, 0] * ped_w
        ys = top + offsets[:, 1] * ped_h
        visible = np.ones(NUM_KEYPOINTS, dtype=int)
        if cfg["occlusion"]:
            visible[rng.random(NUM_KEYPOINTS) < cfg["occlusion"]] = 0

        canvas = Image.fromarray(np.clip(background, 0, 255).astype(np.uint8))
        draw = ImageDraw.Draw(canvas)
        color = tuple(int(c) for c in np.clip(figure, 0, 255))
        torso_w = 0.16 * ped_w
        draw.rectangle([cx - torso_w, ys[1], cx + torso_w, (ys[8] + ys[11]) / 2], fill=color)
        for a, b in _LIMBS:
            draw.line([(xs[a], ys[a]), (xs[b], ys[b])], fill=color, width=2)
        head_r = 0.09 * ped_h
        hx, hy = cx + facing * 0.08 * ped_w, top + 0.09 * ped_h
        draw.ellipse([hx - head_r, hy - head_r, hx + head_r, hy + head_r], fill=color)
        if cfg["marker"]:
            draw.ellipse([xs[0] - 2, ys[0] - 2, xs[0] + 2, ys[0] + 2], fill=(255, 230, 40))
        pixels = np.asarray(canvas, dtype=np.float64)
        if cfg["noise"]:
            pixels = pixels + rng.normal(0, cfg["noise"], size=pixels.shape)
        pixels = np.clip(np.rint(pixels), 0, 255).astype(np.uint8)

        path = f"images/{video_id}/{t:04d}.png"
        images[path] = pixels
        bbox = (max(cx - ped_w / 2, 0.0), max(top, 0.0), min(cx + ped_w / 2, float(W)),
                min(top + ped_h, float(H)))
        kps = tuple((float(np.clip(x, 0, W)), float(np.clip(y, 0, H)), int(v))
                    for x, y, v in zip(xs, ys, visible))
        records.append(AnnotationRecord(
            video_id=video_id, frame=t, ped_id="p0",
            bbox=tuple(round(v, 3) for v in bbox),
            keypoints=tuple((round(x, 3), round(y, 3), v) for x, y, v in kps),
            cross=label, speed=int(speeds[t]), image=path, size=(W, H)))
    return records, images


def render_synthetic(num_tracks, seed=0, image_size=(128, 96), difficulty="easy",
                     n_speed_classes=5):
    """Render a dataset in memory. ``image_size`` is (W, H)."""
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"difficulty must be one of {DIFFICULTIES}, got {difficulty!r}")
    W, H = image_size
    data = SyntheticData(records=[], manifest={
        "generator": "synthetic", "tracks": int(num_tracks), "seed": int(seed),
        "image_size": [int(W), int(H)], "difficulty": difficulty,
        "speed_classes": int(n_speed_classes)})
    for i in range(num_tracks):
        recs, imgs = _render_track(seed, i, W, H, difficulty, n_speed_classes)
        data.records.extend(recs)
        data.images.update(imgs)
    return data


def write_dataset(data: SyntheticData, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rel, pixels in data.images.items():
        target = out / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(pixels).save(target, format="PNG")
    write_annotations(data.records, out / ANNOTATION_FILE)
    with open(out / MANIFEST_FILE, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def generate_synthetic(out_dir, num_tracks, seed=0, image_size=(128, 96), difficulty="easy",
                       n_speed_classes=5, force=False):
    """Render and write an annotation file plus PNG frames under ``out_dir``."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise FileExistsError(f"{out} exists and is not empty (use force to overwrite)")
        shutil.rmtree(out)
    data = render_synthetic(num_tracks, seed, image_size, difficulty, n_speed_classes)
    return write_dataset(data, out)


def mean_horizontal_displacement(records):
    """Mean per-frame change of the box centre x over consecutive records."""
    cx = np.array([(r.bbox[0] + r.bbox[2]) / 2.0 for r in records])
    return float(np.mean(np.diff(cx))) if len(cx) > 1 else 0.0
