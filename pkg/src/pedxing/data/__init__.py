"""Annotation parsing, tracks and windows, crops, clip datasets and synthetic scenes."""

from .annotations import AnnotationRecord, parse_annotations, write_annotations
from .dataset import ClipDataset, ClipSample, load_splits, samples_from_tracks
from .synthetic import generate_synthetic, render_synthetic
from .tracks import Track, Window, build_tracks, extract_windows, split_dataset

__all__ = ["AnnotationRecord", "ClipDataset", "ClipSample", "Track", "Window", "build_tracks",
           "extract_windows", "generate_synthetic", "load_splits", "parse_annotations",
           "render_synthetic", "samples_from_tracks", "split_dataset", "write_annotations"]
