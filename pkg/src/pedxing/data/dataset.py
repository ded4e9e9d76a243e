"""Turn annotation windows into model-ready 16-frame clip samples."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image

from ..exceptions import DataError
from ..heads import POSE_DIM
from .annotations import parse_annotations
from .imaging import CropWarning, crop_and_resize, normalize_keypoints
from .synthetic import ANNOTATION_FILE
from .tracks import CLIP_LENGTH, build_tracks, extract_windows, split_dataset


@dataclass
class ClipSample:
    frames: np.ndarray         # [16, 3, h, w] float32 in [0, 1]
    label: int
    pose_targets: np.ndarray   # [16, 36]
    pose_mask: np.ndarray      # [16, 36]
    speed_targets: np.ndarray  # [16, S] one-hot
    video_id: str = ""
    ped_id: str = ""
    start_frame: int = 0

    def validate(self):
        l = self.frames.shape[0]
        if l != CLIP_LENGTH or self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise DataError(f"clip frames must be [16,3,h,w], got {self.frames.shape}")
        if self.label not in (0, 1):
            raise DataError(f"clip label must be 0/1, got {self.label}")
        if self.pose_targets.shape != (l, POSE_DIM) or self.pose_mask.shape != (l, POSE_DIM):
            raise DataError("pose targets/mask must be [16,36]")
        if self.pose_targets.min() < 0 or self.pose_targets.max() > 1:
            raise DataError("pose targets must lie in [0, 1]")
        if not np.isin(self.pose_mask, (0, 1)).all():
            raise DataError("pose mask must be 0/1")
        if np.any(self.pose_targets[self.pose_mask == 0] != 0):
            raise DataError("masked pose targets must be 0")
        if self.speed_targets.shape[0] != l or not np.all(self.speed_targets.sum(axis=1) == 1):
            raise DataError("speed targets must be one-hot per frame")
        if self.frames.min() < 0 or self.frames.max() > 1:
            raise DataError("frame pixels must lie in [0, 1]")
        return self


class ImageStore:
    """Loads RGB frames relative to a dataset root, caching decoded arrays."""

    def __init__(self, root, cache_size=4096):
        self.root = Path(root)
        self._load = lru_cache(maxsize=cache_size)(self._read)

    def _read(self, rel):
        with Image.open(self.root / rel) as im:
            return np.asarray(im.convert("RGB"))

    def __call__(self, rel):
        return self._load(rel)


def window_to_sample(window, load_image, out_size=(64, 64), context=0.1, n_speed_classes=5):
    """Crop and label one window; ``None`` when any crop is degenerate."""
    frames, poses, masks, speeds = [], [], [], []
    for r in window.records:
        if r.speed >= n_speed_classes:
            raise DataError(
                f"speed class {r.speed} (video {r.video_id}, frame {r.frame}) "
                f">= configured {n_speed_classes} classes")
        crop = crop_and_resize(load_image(r.image), r.bbox, out_size, context)
        if crop is None:
            return None
        frames.append(crop)
        ratios, mask = normalize_keypoints(r.keypoints, r.size)
        poses.append(ratios)
        masks.append(mask)
        speeds.append(np.eye(n_speed_classes)[r.speed])
    first = window.records[0]
    return ClipSample(
        frames=np.stack(frames).astype(np.float32), label=int(window.label),
        pose_targets=np.stack(poses).astype(np.float32),
        pose_mask=np.stack(masks).astype(np.float32),
        speed_targets=np.stack(speeds).astype(np.float32),
        video_id=first.video_id, ped_id=first.ped_id, start_frame=first.frame)


class ClipDataset:
    """An ordered collection of clip samples with stacked-array batching."""

    def __init__(self, samples):
        self.samples = list(samples)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def labels(self):
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def class_counts(self):
        labels = self.labels
        return int((labels == 1).sum()), int((labels == 0).sum())

    def subset(self, indices):
        return ClipDataset([self.samples[i] for i in indices])

    def stack(self, indices=None):
        idx = range(len(self.samples)) if indices is None else indices
        chosen = [self.samples[i] for i in idx]
        return {
            "frames": np.stack([s.frames for s in chosen]),
            "labels": np.array([s.label for s in chosen], dtype=np.int64),
            "pose": np.stack([s.pose_targets for s in chosen]),
            "pose_mask": np.stack([s.pose_mask for s in chosen]),
            "speed": np.stack([s.speed_targets for s in chosen]),
        }

    def batches(self, batch_size, order=None):
        """Yield stacked batches following ``order`` (default: dataset order)."""
        order = np.arange(len(self)) if order is None else np.asarray(order)
        for start in range(0, len(order), batch_size):
            yield self.stack(order[start:start + batch_size])


def samples_from_tracks(tracks, load_image, stride=8, out_size=(64, 64), context=0.1,
                        n_speed_classes=5):
    samples = []
    skipped = 0
    for track in tracks:
        for window in extract_windows(track, CLIP_LENGTH, stride):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", CropWarning)
                sample = window_to_sample(window, load_image, out_size, context, n_speed_classes)
            if sample is None:
                skipped += 1
            else:
                samples.append(sample)
    if skipped:
        warnings.warn(f"skipped {skipped} window(s) with degenerate crops", CropWarning,
                      stacklevel=2)
    return ClipDataset(samples)


def load_splits(data_dir, stride=8, out_size=(64, 64), context=0.1, n_speed_classes=5,
                train_fraction=0.8, seed=0, records=None, load_image=None):
    """Parse, track, split by video and window a dataset directory.

    Returns ``(train, test)`` clip datasets.
    """
    root = Path(data_dir) if data_dir is not None else None
    if records is None:
        records = parse_annotations(root / ANNOTATION_FILE)
    if load_image is None:
        load_image = ImageStore(root)
    tracks = build_tracks(records)
    train_tracks, test_tracks = split_dataset(tracks, train_fraction, seed)
    kw = dict(stride=stride, out_size=out_size, context=context, n_speed_classes=n_speed_classes)
    return (samples_from_tracks(train_tracks, load_image, **kw),
            samples_from_tracks(test_tracks, load_image, **kw))
