"""Velocity-threshold saccade detection and looking-behaviour metrics."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import CameraIntrinsics

FIXATION = "Fixation"
SACCADE = "Saccade"
# missing gaze samples; they break events and are never interpolated
GAP = "Gap"
_CODES = {FIXATION: 0, SACCADE: 1, GAP: 2}
_NAMES = {v: k for k, v in _CODES.items()}


@dataclass
class GazeTrace:
    """Gaze samples in pixels; NaN rows mark missing samples."""

    times: np.ndarray
    points: np.ndarray
    intr: CameraIntrinsics

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(self.times) != len(self.points):
            raise ValueError("times and points differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @classmethod
    def from_points(cls, points, intr: CameraIntrinsics, start_frame: int = 0) -> "GazeTrace":
        points = np.asarray(points, dtype=np.float64)
        return cls((np.arange(len(points)) + start_frame) / intr.fps, points, intr)

    @classmethod
    def from_session(cls, session) -> "GazeTrace":
        return cls.from_points(session.gaze, session.intr)


@dataclass
class EventSegmentation:
    labels: np.ndarray                      # per-sample codes, see ``label_names``
    events: list[tuple[str, int, int]]      # (kind, start, end inclusive)

    @property
    def label_names(self) -> list[str]:
        return [_NAMES[int(c)] for c in self.labels]

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e[0] == kind)

    def durations(self, kind: str) -> np.ndarray:
        return np.array([e[2] - e[1] + 1 for e in self.events if e[0] == kind], dtype=np.int64)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive ``(start, end)`` of maximal True runs."""
    if not mask.any():
        return []
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    d = np.diff(padded)
    return list(zip(np.flatnonzero(d == 1).tolist(), (np.flatnonzero(d == -1) - 1).tolist()))


def _events(codes: np.ndarray) -> list[tuple[str, int, int]]:
    out = []
    start = 0
    for i in range(1, len(codes) + 1):
        if i == len(codes) or codes[i] != codes[start]:
            out.append((_NAMES[int(codes[start])], start, i - 1))
            start = i
    return out


def sample_velocities(trace: GazeTrace) -> np.ndarray:
    """Angular speed (deg/s) of each sample towards the next; NaN where undefined.

    The last sample, samples next to a missing one and samples followed by a
    timing gap (more than 1.5 frame intervals) have no velocity.
    """
    pts, intr = trace.points, trace.intr
    v = np.full(len(pts), np.nan)
    if len(pts) < 2:
        return v
    step = np.hypot(*(pts[1:] - pts[:-1]).T) * intr.deg_per_px
    v[:-1] = step * intr.fps
    gaps = np.diff(trace.times) > 1.5 / intr.fps
    v[:-1][gaps] = np.nan
    return v


def detect_saccades(trace: GazeTrace, t1: float = 25.0, t2: float = 10.0, theta: float = 45.0,
                    extend: bool = True) -> EventSegmentation:
    """Label every sample Fixation or Saccade (or Gap when missing).

    Samples whose speed towards the next sample is at least ``t1`` form core
    saccades (maximal runs).  Each core absorbs at most one neighbouring sample
    per side whose speed is at least ``t2`` and whose motion points within
    ``theta`` degrees of the core's net displacement (first core sample to the
    sample after the core).
    """
    if len(trace) < 2:
        raise ValueError("saccade detection needs at least two samples")
    if not t1 > t2 > 0:
        raise ValueError("thresholds must satisfy t1 > t2 > 0")
    if not 0 < theta <= 180:
        raise ValueError("theta must lie in (0, 180]")
    pts = trace.points
    missing = ~np.all(np.isfinite(pts), axis=1)
    v = sample_velocities(trace)
    with np.errstate(invalid="ignore"):
        core = np.nan_to_num(v, nan=-1.0) >= t1
    codes = np.where(core, _CODES[SACCADE], _CODES[FIXATION]).astype(np.int8)
    if extend:
        cos_theta = math.cos(math.radians(theta))
        n = len(pts)
        for s, e in _runs(core):
            net = pts[e + 1] - pts[s]
            net_norm = float(np.hypot(*net))
            if net_norm == 0.0:
                continue
            for i in (s - 1, e + 1):
                if not 0 <= i < n - 1 or core[i] or not (v[i] >= t2):
                    continue
                motion = pts[i + 1] - pts[i]
                if float(motion @ net) >= cos_theta * float(np.hypot(*motion)) * net_norm:
                    codes[i] = _CODES[SACCADE]
    codes[missing] = _CODES[GAP]
    return EventSegmentation(codes, _events(codes))


@dataclass
class BehaviorMetrics:
    """Looking-behaviour summary; averages over no events are ``None``."""

    mean_fixation_s: float | None
    mean_look_bout_s: float | None
    mean_hold_look_s: float | None
    cumulative_look_s: float
    mean_saccade_s: float | None


def _mean_or_none(values) -> float | None:
    return float(np.mean(values)) if len(values) else None


def look_bouts(labels: Sequence[tuple[int | None, bool]]) -> list[tuple[int, bool, int, int]]:
    """Maximal runs sharing one (target, holding) pair: ``(target, holding, start, end inclusive)``."""
    out = []
    start = 0
    n = len(labels)
    for i in range(1, n + 1):
        if i == n or labels[i] != labels[start]:
            target, holding = labels[start]
            if target is not None:
                out.append((target, bool(holding), start, i - 1))
            start = i
    return out


def compute_metrics(seg: EventSegmentation, labels: Sequence[tuple[int | None, bool]],
                    fps: float) -> BehaviorMetrics:
    """Fixation, look-bout and hold-look durations (seconds) from a segmentation and per-frame labels."""
    labels = [(None if t is None or (isinstance(t, (int, np.integer)) and t < 0) else int(t), bool(h))
              for t, h in labels]
    if len(labels) != len(seg.labels):
        raise ValueError(f"{len(labels)} labels for {len(seg.labels)} samples")
    fix = seg.durations(FIXATION) / fps
    sac = seg.durations(SACCADE) / fps
    bouts = look_bouts(labels)
    hold = [(e - s + 1) / fps for _, h, s, e in bouts if h]
    look = [(e - s + 1) / fps for _, h, s, e in bouts if not h]
    cumulative = sum(1 for t, _ in labels if t is not None) / fps
    return BehaviorMetrics(_mean_or_none(fix), _mean_or_none(look), _mean_or_none(hold), cumulative,
                           _mean_or_none(sac))


def gaze_histogram(trace: GazeTrace, bins: int | tuple[int, int] = 16) -> np.ndarray:
    """Counts of gaze samples over the frame, shape ``(bins_y, bins_x)``; missing samples are skipped."""
    bx, by = (bins, bins) if isinstance(bins, (int, np.integer)) else bins
    if bx < 1 or by < 1:
        raise ValueError("need at least one bin per axis")
    pts = trace.points[np.all(np.isfinite(trace.points), axis=1)]
    counts, _, _ = np.histogram2d(pts[:, 1], pts[:, 0], bins=(by, bx),
                                  range=((0, trace.intr.height_px), (0, trace.intr.width_px)))
    return counts.astype(np.int64)


METRIC_COLUMNS = ("session_id",) + tuple(f.name for f in fields(BehaviorMetrics))


def write_metrics_csv(rows: Sequence[tuple[str, BehaviorMetrics]], path: str | os.PathLike,
                      config_hash: str | None = None) -> Path:
    """One row per session; absent averages are written as empty cells."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for sid, m in rows:
            w.writerow([sid] + ["" if getattr(m, c) is None else repr(getattr(m, c)) for c in METRIC_COLUMNS[1:]])
    os.replace(tmp, path)
    return path


def read_metrics_csv(path: str | os.PathLike) -> list[tuple[str, BehaviorMetrics]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))[1:]
    return [(r[0], BehaviorMetrics(*[None if v == "" else float(v) for v in r[1:]])) for r in rows]
