"""Crop streams built from sessions, their on-disk manifests, splits and class resampling.

On-disk layout::

    <root>/<session_id>/<strategy>/manifest.txt
    <root>/<session_id>/<strategy>/crops/NNNNNN.png      (NNNNNN = zero-padded frame_idx)

``manifest.txt`` starts with ``# key=value`` header lines (session_id,
strategy, crop_size_px, width_px, height_px, hfov_deg, fps), then one
tab-separated line naming the columns, then one record per line::

    frame_idx  time_s  crop_file  gaze_x  gaze_y  target_object  holding

``frame_idx`` is a decimal integer, ``time_s`` has 6 decimals, gaze
coordinates are written with ``repr`` (shortest exact round-trip), an absent
``target_object`` is written as ``-1`` and ``holding`` as ``0``/``1``.
"""

from __future__ import annotations

import hashlib
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .geometry import CameraIntrinsics, GazePoint, compute_crop, deg_to_px
from .playroom import OracleViews, Session, generate_oracle_views

HUMAN_GAZE = "HumanGaze"
RANDOM_GAZE = "RandomGaze"
NO_EYE_MOVEMENT = "NoEyeMovement"
OBJECTS_FIXATION = "ObjectsFixation"
BLANK_BACKGROUND = "BlankBackground"
STRATEGIES = (HUMAN_GAZE, RANDOM_GAZE, NO_EYE_MOVEMENT, OBJECTS_FIXATION, BLANK_BACKGROUND)

COLUMNS = ("frame_idx", "time_s", "crop_file", "gaze_x", "gaze_y", "target_object", "holding")
OBJECT_WINDOW_DEG = 30.0


@dataclass(frozen=True)
class ManifestRecord:
    frame_idx: int
    time_s: float
    crop_file: str
    gaze_x: float
    gaze_y: float
    target_object: int | None
    holding: bool


def _record_time(frame_idx: int, fps: float) -> float:
    # stored at the manifest's precision so that write -> read is exact
    return round(frame_idx / fps, 6)


def crop_name(frame_idx: int) -> str:
    return f"crops/{frame_idx:06d}.png"


@dataclass
class StreamManifest:
    """A crop stream: records plus the crops themselves (uint8, ``n x S x S x 3``)."""

    session_id: str
    intr: CameraIntrinsics
    strategy: str
    crop_size_px: int
    records: list[ManifestRecord]
    crops: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if len(self.records) != len(self.crops):
            raise ValueError("records and crops differ in length")
        idx = self.frame_indices
        if len(idx) > 1 and np.any(np.diff(idx) <= 0):
            raise ValueError("records must be strictly increasing in frame_idx")
        if len(self.crops) and self.crops.shape[1:] != (self.crop_size_px, self.crop_size_px, 3):
            raise ValueError(f"crops have shape {self.crops.shape[1:]}, expected {self.crop_size_px}px squares")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def frame_indices(self) -> np.ndarray:
        return np.array([r.frame_idx for r in self.records], dtype=np.int64)

    @property
    def labels(self) -> np.ndarray:
        """Target object per record, -1 where there is none."""
        return np.array([-1 if r.target_object is None else r.target_object for r in self.records], dtype=np.int64)

    def segments(self) -> list[tuple[int, int]]:
        """``[start, stop)`` record ranges of consecutive ``frame_idx`` (continuous sequences)."""
        idx = self.frame_indices
        if len(idx) == 0:
            return []
        breaks = np.flatnonzero(np.diff(idx) != 1) + 1
        bounds = np.concatenate([[0], breaks, [len(idx)]])
        return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]

    def subset(self, indices: Sequence[int]) -> "StreamManifest":
        indices = np.sort(np.asarray(indices, dtype=np.int64))
        return StreamManifest(self.session_id, self.intr, self.strategy, self.crop_size_px,
                              [self.records[i] for i in indices], self.crops[indices])

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.session_id}|{self.strategy}|{self.crop_size_px}|{self.intr}".encode())
        h.update(self.frame_indices.tobytes())
        h.update(self.labels.tobytes())
        h.update(np.ascontiguousarray(self.crops).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# building streams
# ---------------------------------------------------------------------------

def resize_bilinear(image: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of an ``H x W x C`` uint8 image to ``size x size`` (pixel-centre alignment)."""
    h, w = image.shape[:2]
    if (h, w) == (size, size):
        return image.copy()
    src = image.astype(np.float64)

    def axis(n_in):
        pos = (np.arange(size) + 0.5) * n_in / size - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (pos - lo)

    y0, y1, fy = axis(h)
    x0, x1, fx = axis(w)
    top = src[y0][:, x0] * (1 - fx)[None, :, None] + src[y0][:, x1] * fx[None, :, None]
    bot = src[y1][:, x0] * (1 - fx)[None, :, None] + src[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def _crop_all(frames: np.ndarray, gaze: np.ndarray, size: int, intr: CameraIntrinsics) -> np.ndarray:
    out = np.empty((len(frames), size, size, 3), np.uint8)
    for i, (img, g) in enumerate(zip(frames, gaze)):
        out[i] = compute_crop(GazePoint(float(g[0]), float(g[1])), size, intr).slice(img)
    return out


def _records(frame_idx, gaze, target, holding, fps) -> list[ManifestRecord]:
    return [
        ManifestRecord(int(f), _record_time(int(f), fps), crop_name(int(f)), float(g[0]), float(g[1]),
                       None if t < 0 else int(t), bool(h))
        for f, g, t, h in zip(frame_idx, gaze, target, holding)
    ]


def build_stream(session: Session | OracleViews, strategy: str, crop_size_px: int, *, seed: int = 0,
                 session_id: str | None = None, intr: CameraIntrinsics | None = None,
                 n_views: int = 64) -> StreamManifest:
    """Turn a session into one training stream.

    ``HumanGaze`` crops at the recorded gaze, ``RandomGaze`` at a fresh
    uniform point per frame (seeded), ``NoEyeMovement`` at the session's mean
    gaze.  ``ObjectsFixation`` keeps only frames whose gaze is on a toy, cuts a
    30 degree window around the gaze and rescales it bilinearly.
    ``BlankBackground`` passes oracle views through: either an
    :class:`OracleViews` set, or ``n_views`` views rendered for the session's
    toys.  Oracle sequences are one per toy, separated by a one-index gap.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy == BLANK_BACKGROUND:
        return _blank_stream(session, crop_size_px, session_id, intr, n_views, seed)
    if not isinstance(session, Session):
        raise TypeError(f"{strategy} needs a simulated Session")
    if len(session) == 0:
        raise ValueError("empty session")
    intr = session.intr
    if crop_size_px < 1 or crop_size_px > min(intr.width_px, intr.height_px):
        raise ValueError(f"crop size {crop_size_px} invalid for {intr.width_px}x{intr.height_px} frames")
    sid = session_id or session.session_id
    n = len(session)
    frame_idx = np.arange(n)
    target, holding = session.target, session.holding

    if strategy == HUMAN_GAZE:
        gaze = session.gaze
    elif strategy == RANDOM_GAZE:
        rng = np.random.default_rng([seed, 21])
        gaze = np.stack([rng.uniform(0, intr.width_px, n), rng.uniform(0, intr.height_px, n)], axis=1)
    elif strategy == NO_EYE_MOVEMENT:
        gaze = np.tile(session.gaze.mean(axis=0), (n, 1))
    else:
        keep = np.flatnonzero(target >= 0)
        if len(keep) == 0:
            raise ValueError("ObjectsFixation: session has no frames with a gaze target")
        window = min(int(round(deg_to_px(OBJECT_WINDOW_DEG, intr))), intr.width_px, intr.height_px)
        raw = _crop_all(session.frames[keep], session.gaze[keep], window, intr)
        crops = np.stack([resize_bilinear(c, crop_size_px) for c in raw])
        records = _records(keep, session.gaze[keep], target[keep], holding[keep], intr.fps)
        return StreamManifest(sid, intr, strategy, crop_size_px, records, crops)

    if strategy != HUMAN_GAZE:
        # labels follow the gaze that produced the crop
        target = np.full(n, -1)
        holding = np.zeros(n, bool)
    crops = _crop_all(session.frames, gaze, crop_size_px, intr)
    return StreamManifest(sid, intr, strategy, crop_size_px, _records(frame_idx, gaze, target, holding, intr.fps), crops)


def _blank_stream(source, crop_size_px, session_id, intr, n_views, seed) -> StreamManifest:
    if isinstance(source, Session):
        intr = intr or source.intr
        views = generate_oracle_views(source.objects, n_views, "blank", crop_size_px, seed=seed)
        sid = session_id or source.session_id
    elif isinstance(source, OracleViews):
        views = source
        intr = intr or CameraIntrinsics(64, 64, 72.0, 30.0)
        sid = session_id or "oracle"
    else:
        raise TypeError("BlankBackground needs a Session or OracleViews")
    images = views.images
    if images.shape[1] != crop_size_px:
        images = np.stack([resize_bilinear(im, crop_size_px) for im in images])
    objects = np.unique(views.labels)
    order = np.concatenate([np.flatnonzero(views.labels == obj) for obj in objects])
    sizes = [int(np.sum(views.labels == obj)) for obj in objects]
    # one-index gap after every toy's sweep so pairs never span two toys
    frame_idx = np.arange(len(order)) + np.repeat(np.arange(len(objects)), sizes)
    centre = (crop_size_px - 1) / 2
    records = [ManifestRecord(int(f), _record_time(int(f), intr.fps), crop_name(int(f)), centre, centre,
                              int(views.labels[i]), False) for f, i in zip(frame_idx, order)]
    return StreamManifest(sid, intr, BLANK_BACKGROUND, crop_size_px, records, images[order])


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def manifest_dir(root: str | os.PathLike, session_id: str, strategy: str) -> Path:
    return Path(root) / session_id / strategy


def write_manifest(manifest: StreamManifest, root: str | os.PathLike, overwrite: bool = False) -> Path:
    """Write crops and ``manifest.txt`` under ``root``; the directory is swapped in atomically."""
    final = manifest_dir(root, manifest.session_id, manifest.strategy)
    if final.exists() and not overwrite:
        raise FileExistsError(f"{final} exists (pass overwrite=True to replace it)")
    tmp = final.with_name(final.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    (tmp / "crops").mkdir(parents=True)
    for rec, crop in zip(manifest.records, manifest.crops):
        Image.fromarray(crop).save(tmp / rec.crop_file, format="PNG")
    intr = manifest.intr
    lines = [
        f"# session_id={manifest.session_id}",
        f"# strategy={manifest.strategy}",
        f"# crop_size_px={manifest.crop_size_px}",
        f"# width_px={intr.width_px}",
        f"# height_px={intr.height_px}",
        f"# hfov_deg={intr.hfov_deg!r}",
        f"# fps={intr.fps!r}",
        "\t".join(COLUMNS),
    ]
    for r in manifest.records:
        lines.append("\t".join([
            str(r.frame_idx), f"{r.time_s:.6f}", r.crop_file, repr(r.gaze_x), repr(r.gaze_y),
            str(-1 if r.target_object is None else r.target_object), "1" if r.holding else "0",
        ]))
    (tmp / "manifest.txt").write_text("\n".join(lines) + "\n")
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)
    return final


def read_manifest(path: str | os.PathLike, load_crops: bool = True) -> StreamManifest:
    """Read a manifest directory (or its ``manifest.txt``)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.txt"
    header: dict[str, str] = {}
    records: list[ManifestRecord] = []
    columns_seen = False
    for line in path.read_text().splitlines():
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            header[key] = value
            continue
        parts = line.split("\t")
        if not columns_seen:
            if tuple(parts) != COLUMNS:
                raise ValueError(f"{path}: unexpected column header {parts}")
            columns_seen = True
            continue
        if len(parts) != len(COLUMNS):
            raise ValueError(f"{path}: malformed record {line!r}")
        target = int(parts[5])
        records.append(ManifestRecord(int(parts[0]), float(parts[1]), parts[2], float(parts[3]), float(parts[4]),
                                      None if target < 0 else target, parts[6] == "1"))
    intr = CameraIntrinsics(int(header["width_px"]), int(header["height_px"]),
                            float(header["hfov_deg"]), float(header["fps"]))
    size = int(header["crop_size_px"])
    if load_crops:
        crops = np.stack([np.asarray(Image.open(path.parent / r.crop_file).convert("RGB")) for r in records]) \
            if records else np.zeros((0, size, size, 3), np.uint8)
    else:
        crops = np.zeros((len(records), size, size, 3), np.uint8)
    return StreamManifest(header["session_id"], intr, header["strategy"], size, records, crops)


# ---------------------------------------------------------------------------
# splits and resampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.75
    split_seed: int = 0
    unit: str = "frame-block"
    block_s: float = 10.0
    guard_s: float = 1.0
    stratify: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        if self.unit not in ("session", "frame-block"):
            raise ValueError(f"unknown split unit {self.unit!r}")
        if self.block_s <= 0 or self.guard_s < 0:
            raise ValueError("block_s must be positive and guard_s non-negative")


def _block_split(times: np.ndarray, groups: np.ndarray, spec: SplitSpec, rng) -> np.ndarray:
    """Boolean train mask.  Within each group, time-ordered records are chunked into blocks;
    shuffled blocks go to train until the group's quota is met, the last one possibly cut."""
    train = np.zeros(len(times), bool)
    for g in np.unique(groups):
        members = np.flatnonzero(groups == g)
        members = members[np.argsort(times[members], kind="stable")]
        block_id = np.floor((times[members] - times[members[0]]) / spec.block_s).astype(int)
        blocks = [members[block_id == b] for b in np.unique(block_id)]
        quota = int(round(spec.train_fraction * len(members)))
        taken = 0
        for b in rng.permutation(len(blocks)):
            if taken >= quota:
                break
            chunk = blocks[b][: quota - taken]
            train[chunk] = True
            taken += len(chunk)
    return train


def _apply_guard(times: np.ndarray, train: np.ndarray, groups: np.ndarray, guard_s: float) -> np.ndarray:
    """Test mask: non-train records farther than ``guard_s`` from every train record of their group."""
    out = ~train
    if guard_s <= 0:
        return out
    for g in np.unique(groups):
        tr = np.sort(times[train & (groups == g)])
        te = np.flatnonzero(~train & (groups == g))
        if len(tr) == 0 or len(te) == 0:
            continue
        t = times[te]
        pos = np.searchsorted(tr, t)
        left = np.abs(t - tr[np.clip(pos - 1, 0, len(tr) - 1)])
        right = np.abs(tr[np.clip(pos, 0, len(tr) - 1)] - t)
        out[te[np.minimum(left, right) <= guard_s + 1e-9]] = False
    return out


def split_indices(manifest: StreamManifest, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Train and test record indices of one manifest under a frame-block split."""
    if len(manifest) < 2:
        raise ValueError("cannot split a manifest with fewer than two records")
    rng = np.random.default_rng(spec.split_seed)
    times = np.array([r.time_s for r in manifest.records])
    groups = manifest.labels if spec.stratify else np.zeros(len(manifest), int)
    train = _block_split(times, groups, spec, rng)
    test = _apply_guard(times, train, groups, spec.guard_s)
    return np.flatnonzero(train), np.flatnonzero(test)


def split(manifest: StreamManifest | Sequence[StreamManifest], spec: SplitSpec):
    """Split one manifest by frame blocks, or a list of manifests by session.

    Frame-block splits return ``(train manifest, test manifest)``; session
    splits return two lists of manifests.
    """
    if spec.unit == "session":
        manifests = list(manifest) if not isinstance(manifest, StreamManifest) else [manifest]
        if len(manifests) < 2:
            raise ValueError("a session split needs at least two sessions")
        rng = np.random.default_rng(spec.split_seed)
        order = rng.permutation(len(manifests))
        n_train = min(len(manifests) - 1, max(1, int(round(spec.train_fraction * len(manifests)))))
        return [manifests[i] for i in sorted(order[:n_train])], [manifests[i] for i in sorted(order[n_train:])]
    if not isinstance(manifest, StreamManifest):
        raise TypeError("frame-block splits take a single manifest")
    train, test = split_indices(manifest, spec)
    return manifest.subset(train), manifest.subset(test)


def resample(labels: np.ndarray, mode: str, top_k: int = 5, seed: int = 0) -> np.ndarray:
    """Indices of a class-rebalanced version of a labelled set.

    ``undersample`` cuts each of the ``top_k`` most frequent classes down to the
    mean count of the remaining classes; ``oversample`` raises every other
    class (drawing with replacement) to the mean count of the top classes.
    Targets are rounded to the nearest integer; ties in frequency are broken
    by class value.
    """
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if top_k < 1 or top_k >= len(classes):
        raise ValueError(f"top_k={top_k} needs more than top_k classes (have {len(classes)})")
    if mode not in ("undersample", "oversample"):
        raise ValueError(f"unknown resampling mode {mode!r}")
    rng = np.random.default_rng(seed)
    order = np.lexsort((classes, -counts))
    top = set(classes[order[:top_k]].tolist())
    top_mask = np.array([c in top for c in classes])
    keep: list[np.ndarray] = []
    if mode == "undersample":
        target = int(round(counts[~top_mask].mean()))
        for c, is_top in zip(classes, top_mask):
            members = np.flatnonzero(labels == c)
            if is_top and len(members) > target:
                members = np.sort(rng.choice(members, size=target, replace=False))
            keep.append(members)
    else:
        target = int(round(counts[top_mask].mean()))
        for c, is_top in zip(classes, top_mask):
            members = np.flatnonzero(labels == c)
            if not is_top and len(members) < target:
                extra = rng.choice(members, size=target - len(members), replace=True)
                members = np.concatenate([members, np.sort(extra)])
            keep.append(members)
    return np.concatenate(keep)
