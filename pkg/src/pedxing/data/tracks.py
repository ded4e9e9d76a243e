"""Per-pedestrian tracks, 16-frame windows and by-video splits."""

from __future__ import annotations

import hashlib
from collections import defaultdict
from dataclasses import dataclass

from ..exceptions import DataError, ParameterError

CLIP_LENGTH = 16


@dataclass(frozen=True)
class Track:
    video_id: str
    ped_id: str
    records: tuple

    def __len__(self):
        return len(self.records)

    @property
    def frames(self):
        return [r.frame for r in self.records]


@dataclass(frozen=True)
class Window:
    """A clip precursor: ``length`` consecutive records of one track."""

    track: Track
    start: int
    length: int = CLIP_LENGTH

    @property
    def records(self):
        return self.track.records[self.start:self.start + self.length]

    @property
    def label(self):
        return self.records[-1].cross


def build_tracks(records):
    """Group by (video, pedestrian), sort by frame, split at frame gaps."""
    groups = defaultdict(dict)
    for r in records:
        frames = groups[r.key]
        if r.frame in frames:
            raise DataError(
                f"duplicate annotation for video {r.video_id!r}, pedestrian {r.ped_id!r}, "
                f"frame {r.frame}")
        frames[r.frame] = r

    tracks = []
    for (video_id, ped_id) in sorted(groups):
        by_frame = groups[(video_id, ped_id)]
        run = []
        for frame in sorted(by_frame):
            if run and frame != run[-1].frame + 1:
                tracks.append(Track(video_id, ped_id, tuple(run)))
                run = []
            run.append(by_frame[frame])
        tracks.append(Track(video_id, ped_id, tuple(run)))
    return tracks


def extract_windows(track, length=CLIP_LENGTH, stride=8):
    """Windows starting at 0, stride, 2·stride, ... that fit inside the track."""
    if stride < 1:
        raise ParameterError(f"window stride must be >= 1, got {stride}")
    if length < 1:
        raise ParameterError(f"window length must be >= 1, got {length}")
    return [Window(track, start, length)
            for start in range(0, len(track) - length + 1, stride)]


def _video_rank(video_id, seed):
    return hashlib.sha256(f"{seed}:{video_id}".encode()).hexdigest()


def split_dataset(tracks, train_fraction, seed=0):
    """Split tracks by video so that no video lands in both halves.

    Videos are ordered by a seeded hash of their id and the first
    ``round(train_fraction · n_videos)`` go to train.
    """
    if not 0 < train_fraction < 1:
        raise ParameterError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    videos = sorted({t.video_id for t in tracks}, key=lambda v: (_video_rank(v, seed), v))
    n_train = int(round(train_fraction * len(videos)))
    if len(videos) >= 2:
        n_train = min(max(n_train, 1), len(videos) - 1)
    train_videos = set(videos[:n_train])
    train = [t for t in tracks if t.video_id in train_videos]
    test = [t for t in tracks if t.video_id not in train_videos]
    return train, test
