"""Procedural egocentric play sessions with ground-truth gaze and object labels.

A session is a head-camera view of a cluttered tabletop with ``n_objects``
toys.  The camera wearer pans the head, picks toys up, turns them in depth
while holding them, and moves the eyes according to a :class:`GazePolicy`.
Every toy is a 2-D parametric glyph with a one-parameter view family
(``view`` in [0, 1) = one full turn in depth), which is what makes
temporally adjacent crops show different views of the same object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from .geometry import CameraIntrinsics, GazePoint, deg_to_px

SHAPE_FAMILIES = ("disc", "bar", "cross", "ring", "blob", "polygon")

TODDLER = "ToddlerLike"
ADULT = "AdultLike"
RANDOM = "Random"
NO_EYE_MOVEMENT = "NoEyeMovement"
POLICY_KINDS = (TODDLER, ADULT, RANDOM, NO_EYE_MOVEMENT)

PALETTE = (
    (0.85, 0.20, 0.15),
    (0.15, 0.55, 0.90),
    (0.95, 0.80, 0.10),
    (0.20, 0.70, 0.25),
    (0.70, 0.25, 0.80),
    (0.95, 0.50, 0.10),
    (0.10, 0.75, 0.75),
    (0.90, 0.40, 0.60),
)
SKIN = np.array([0.87, 0.68, 0.55], np.float32)

HELD_SCALE = 1.6
BACKGROUND_ID = -1
OCCLUDER_ID = -2


# ---------------------------------------------------------------------------
# configuration types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectSpec:
    object_id: int
    shape_family: str
    base_color: tuple[float, float, float]
    texture_seed: int
    size_px: float
    n_sides: int = 0
    orientation: float = 0.0
    stripe_freq: float = 2.0
    stripe_angle: float = 0.0


@dataclass(frozen=True)
class GazePolicy:
    """Gaze behaviour.  Durations are means of exponential distributions (seconds).

    ``mean_hold_look_s`` is the mean bout of looking at the object currently
    held; ``mean_look_bout_s`` the mean bout on a toy that is not held.
    ``Random`` and ``NoEyeMovement`` ignore the duration fields for the gaze
    itself (the world dynamics still follow a toddler-like schedule).
    """

    kind: str = TODDLER
    mean_fixation_s: float = 0.5
    mean_look_bout_s: float = 1.2
    mean_hold_look_s: float = 3.0
    saccade_amplitude_deg: float = 8.0
    policy_seed: int = 0
    p_look_held: float = 0.7
    p_background: float = 0.1
    mean_hold_episode_s: float = 12.0
    mean_free_s: float = 3.0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown gaze policy {self.kind!r}")
        for name in ("mean_fixation_s", "mean_look_bout_s", "mean_hold_look_s",
                     "mean_hold_episode_s", "mean_free_s", "saccade_amplitude_deg"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def toddler(cls, **kw) -> "GazePolicy":
        return cls(kind=TODDLER, **kw)

    @classmethod
    def adult(cls, **kw) -> "GazePolicy":
        params = dict(mean_fixation_s=0.45, mean_look_bout_s=1.1, mean_hold_look_s=1.2)
        params.update(kw)
        return cls(kind=ADULT, **params)


@dataclass(frozen=True)
class HeadMotion:
    # a slow scan over a tabletop wider than the camera's field of view
    amplitude_deg: float = 20.0
    period_s: float = 20.0


@dataclass(frozen=True)
class SessionConfig:
    intr: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics(64, 64, 72.0, 30.0))
    duration_s: float = 120.0
    n_objects: int = 8
    policy: GazePolicy = field(default_factory=GazePolicy)
    head_motion: HeadMotion = field(default_factory=HeadMotion)
    background: str = "clutter"
    render_seed: int = 0
    # toys are shared by every session built from the same objects_seed
    objects_seed: int = 0
    object_size_deg: float = 14.0
    n_colors: int | None = None
    occluders: bool = True
    # per-pixel Gaussian sensor noise (std, in [0, 1] intensity units)
    sensor_noise: float = 0.03
    session_id: str = "session"

    def __post_init__(self):
        if self.n_objects < 2:
            raise ValueError("need at least two objects")
        if self.background not in ("clutter", "blank"):
            raise ValueError(f"background must be 'clutter' or 'blank', got {self.background!r}")
        if self.sensor_noise < 0:
            raise ValueError("sensor_noise must be non-negative")
        if self.n_frames < 2:
            raise ValueError("session must contain at least two frames")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.intr.fps))


# ---------------------------------------------------------------------------
# toys and their view family
# ---------------------------------------------------------------------------

def make_objects(n: int = 24, seed: int = 0, size_px: float = 16.0, n_colors: int | None = None) -> list[ObjectSpec]:
    """``n`` toys with pairwise distinct (shape, colour); colours and shapes are reused across toys."""
    if n_colors is None:
        n_colors = max(2, math.ceil(n / 2))
    n_colors = min(n_colors, len(PALETTE))
    if n > n_colors * len(SHAPE_FAMILIES):
        raise ValueError(f"cannot make {n} distinct toys from {n_colors} colours")
    rng = np.random.default_rng([seed, 7])
    colour_order = rng.permutation(len(PALETTE))[:n_colors]
    objects = []
    for i in range(n):
        colour = PALETTE[colour_order[i % n_colors]]
        # toys sharing a colour are i = c + m * n_colors, m < 6, and get shapes c + m
        shape = SHAPE_FAMILIES[(i % n_colors + i // n_colors) % len(SHAPE_FAMILIES)]
        objects.append(ObjectSpec(
            object_id=i,
            shape_family=shape,
            base_color=colour,
            texture_seed=int(rng.integers(0, 2**31)),
            size_px=float(size_px * rng.uniform(0.9, 1.1)),
            n_sides=int(rng.integers(3, 7)) if shape == "polygon" else 0,
            orientation=float(rng.uniform(0, np.pi)),
            stripe_freq=float(rng.uniform(1.2, 3.2)),
            stripe_angle=float(rng.uniform(0, np.pi)),
        ))
    return objects


def _silhouette(spec: ObjectSpec, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    # every family contains the disc of radius 0.3; gaze offsets stay well inside it
    r = np.hypot(u, v)
    fam = spec.shape_family
    if fam == "disc":
        return r <= 1.0
    if fam == "bar":
        return (np.abs(u) <= 1.0) & (np.abs(v) <= 0.42)
    if fam == "cross":
        return ((np.abs(u) <= 1.0) & (np.abs(v) <= 0.32)) | ((np.abs(u) <= 0.32) & (np.abs(v) <= 1.0))
    if fam == "ring":
        return ((r <= 1.0) & (r >= 0.66)) | (r <= 0.4)
    theta = np.arctan2(v, u)
    if fam == "blob":
        phase = (spec.texture_seed % 1000) / 1000 * 2 * np.pi
        return r <= 0.72 + 0.28 * np.sin(3 * theta + phase)
    if fam == "polygon":
        n = max(3, spec.n_sides)
        sector = np.mod(theta, 2 * np.pi / n) - np.pi / n
        return r * np.cos(sector) <= np.cos(np.pi / n)
    raise ValueError(f"unknown shape family {fam!r}")


def foreshortening(view: float) -> float:
    return 0.3 + 0.7 * abs(math.cos(2 * math.pi * view))


def sprite_size(spec: ObjectSpec, scale: float) -> int:
    return int(math.ceil(spec.size_px * scale)) + 2


def render_object(spec: ObjectSpec, view: float, scale: float = 1.0,
                  shift: tuple[float, float] = (0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """Render one toy; returns float ``rgb (n, n, 3)`` and boolean ``mask (n, n)``.

    The toy's centre sits ``shift`` pixels (x, y) away from the sprite centre,
    which lets callers place toys with sub-pixel precision.

    The view parameter turns the toy in depth: the silhouette is foreshortened
    along its local u axis, shading follows the turn, the surface pattern
    slides, and the back face (``cos(2 pi view) < 0``) shows dots instead of
    stripes.
    """
    radius = 0.5 * spec.size_px * scale
    n = sprite_size(spec, scale)
    grid = np.arange(n, dtype=np.float64) - (n - 1) / 2
    y, x = np.meshgrid((grid - shift[1]) / radius, (grid - shift[0]) / radius, indexing="ij")
    c, s = math.cos(spec.orientation), math.sin(spec.orientation)
    u0 = c * x + s * y
    v = -s * x + c * y
    angle = 2 * math.pi * (view % 1.0)
    fs = foreshortening(view)
    u = u0 / fs
    mask = _silhouette(spec, u, v)

    base = np.asarray(spec.base_color, dtype=np.float64)
    shade = 0.62 + 0.38 * (0.5 + 0.5 * np.sin(angle + 1.3 * u))
    front = math.cos(angle) >= 0
    ca, sa = math.cos(spec.stripe_angle), math.sin(spec.stripe_angle)
    proj = u * ca + v * sa
    slide = 2.0 * angle
    if front:
        pattern = np.sin(np.pi * spec.stripe_freq * proj * 1.5 + slide) > 0.2
    else:
        pattern = (np.sin(np.pi * spec.stripe_freq * u * 1.4 + slide) * np.sin(np.pi * spec.stripe_freq * v * 1.4)) > 0.35
    tint = np.where(pattern[..., None], 0.45 + 0.55 * base, base * 0.55)
    rgb = np.clip(tint * shade[..., None], 0.0, 1.0)
    return rgb.astype(np.float32), mask


# ---------------------------------------------------------------------------
# world and rendering
# ---------------------------------------------------------------------------

@dataclass
class WorldState:
    """Everything needed to render one frame."""

    frame_idx: int
    head_offset: tuple[float, float]
    table_views: np.ndarray
    on_table: np.ndarray
    held_object: int = -1
    held_view: float = 0.0
    held_pos: tuple[float, float] = (0.0, 0.0)
    held_scale: float = HELD_SCALE
    occluder: tuple[int, int, int, int] | None = None
    gaze: GazePoint = GazePoint(0.0, 0.0)
    # world-coordinate toy centres; None means the initial placement
    table_pos: np.ndarray | None = None


@dataclass(frozen=True)
class FrameRecord:
    """One rendered frame; ``image`` is uint8 ``H x W x 3`` (divide by 255 for [0, 1])."""

    frame_idx: int
    image: np.ndarray
    gaze: GazePoint
    target_object: int | None
    holding: bool


def _smooth_noise(rng: np.random.Generator, h: int, w: int, cell: int) -> np.ndarray:
    gh, gw = h // cell + 2, w // cell + 2
    grid = rng.random((gh, gw))
    ys = np.arange(h) / cell
    xs = np.arange(w) / cell
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = grid[y0][:, x0]
    b = grid[y0][:, x0 + 1]
    c = grid[y0 + 1][:, x0]
    d = grid[y0 + 1][:, x0 + 1]
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy


def make_clutter(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Low-contrast textured tabletop with small distractor patches, float ``(h, w, 3)``."""
    base = np.array([0.42, 0.36, 0.30])
    low = _smooth_noise(rng, h, w, 12)[..., None] - 0.5
    tint = np.stack([_smooth_noise(rng, h, w, 20) for _ in range(3)], axis=-1) - 0.5
    img = base + 0.18 * low + 0.10 * tint
    grain = rng.normal(0, 0.025, size=(h, w, 1))
    img = img + grain
    n_patches = max(4, (h * w) // 180)
    for _ in range(n_patches):
        ph, pw = rng.integers(1, 4, size=2)
        y, x = rng.integers(0, h - ph), rng.integers(0, w - pw)
        colour = base + rng.uniform(-0.25, 0.25, size=3)
        img[y:y + ph, x:x + pw] = colour
    return np.clip(img, 0, 1).astype(np.float32)


class Playroom:
    """Static scene content of a session: toys, tabletop, toy placements."""

    def __init__(self, cfg: SessionConfig):
        self.cfg = cfg
        intr = cfg.intr
        size = deg_to_px(cfg.object_size_deg, intr)
        self.objects = make_objects(cfg.n_objects, cfg.objects_seed, size, cfg.n_colors)
        rng = np.random.default_rng([cfg.render_seed, 1])
        amp = deg_to_px(cfg.head_motion.amplitude_deg, intr) if cfg.head_motion.amplitude_deg > 0 else 0.0
        self.margin = int(math.ceil(amp)) + 1
        self.world_h = intr.height_px + 2 * self.margin
        self.world_w = intr.width_px + 2 * self.margin
        if cfg.background == "clutter":
            self.background = make_clutter(rng, self.world_h, self.world_w)
        else:
            self.background = np.zeros((self.world_h, self.world_w, 3), np.float32)
        self.slots = self._place(rng, size)
        self.initial_views = rng.random(cfg.n_objects)
        self._sprites: dict[tuple[int, int, int], tuple[np.ndarray, np.ndarray]] = {}

    def _place(self, rng: np.random.Generator, size: float) -> np.ndarray:
        # jittered grid with one spare cell: a gaze-centred window rarely holds two toys
        intr = self.cfg.intr
        k = self.cfg.n_objects
        cols = math.ceil(math.sqrt(k + 1))
        rows = math.ceil((k + 1) / cols)
        # the grid spans the whole tabletop the head can sweep over
        cw, ch = self.world_w / cols, self.world_h / rows
        idx = np.arange(rows * cols)
        self.cells = np.stack([(idx % cols + 0.5) * cw, (idx // cols + 0.5) * ch], axis=1)
        self.cell_jitter = max(0.0, 0.5 * min(cw, ch) - 0.55 * size)
        return np.stack([self.cell_position(c, rng) for c in rng.permutation(rows * cols)[:k]])

    def cell_position(self, cell: int, rng: np.random.Generator) -> np.ndarray:
        j = self.cell_jitter
        return self.cells[cell] + (rng.uniform(-j, j, size=2) if j > 0 else 0.0)

    def nearest_cell(self, pos) -> int:
        return int(np.argmin(np.hypot(*(self.cells - np.asarray(pos)).T)))

    def sprite(self, obj: int, view: float, scale: float,
               shift: tuple[float, float] = (0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
        """Cached render; view, scale and shift are quantised to 1/512 turn, 1/20 and 1/8 px."""
        key = (obj, int(round((view % 1.0) * 512)) % 512, int(round(scale * 20)),
               int(round(shift[0] * 8)), int(round(shift[1] * 8)))
        hit = self._sprites.get(key)
        if hit is None:
            hit = render_object(self.objects[obj], key[1] / 512, key[2] / 20, (key[3] / 8, key[4] / 8))
            self._sprites[key] = hit
        return hit

    def _draw(self, img, ids, obj: int, view: float, scale: float, cx: float, cy: float) -> None:
        scale = round(scale * 20) / 20
        n = sprite_size(self.objects[obj], scale)
        # pixel i covers [i, i + 1), so a toy centred at cx sits on pixel index cx - 0.5
        cx, cy = cx - 0.5, cy - 0.5
        x0 = int(math.floor(cx - (n - 1) / 2 + 0.5))
        y0 = int(math.floor(cy - (n - 1) / 2 + 0.5))
        shift = (cx - (n - 1) / 2 - x0, cy - (n - 1) / 2 - y0)
        rgb, mask = self.sprite(obj, view, scale, shift)
        self._paste_at(img, ids, rgb, mask, x0, y0, obj)

    @classmethod
    def _paste(cls, img, ids, rgb, mask, cx, cy, label):
        n = mask.shape[0]
        cls._paste_at(img, ids, rgb, mask, int(round(cx - (n - 1) / 2)), int(round(cy - (n - 1) / 2)), label)

    @staticmethod
    def _paste_at(img, ids, rgb, mask, x0, y0, label):
        n = mask.shape[0]
        h, w = ids.shape
        sx0, sy0 = max(0, -x0), max(0, -y0)
        dx0, dy0 = max(0, x0), max(0, y0)
        dx1, dy1 = min(w, x0 + n), min(h, y0 + n)
        if dx1 <= dx0 or dy1 <= dy0:
            return
        m = mask[sy0:sy0 + dy1 - dy0, sx0:sx0 + dx1 - dx0]
        img[dy0:dy1, dx0:dx1][m] = rgb[sy0:sy0 + dy1 - dy0, sx0:sx0 + dx1 - dx0][m]
        ids[dy0:dy1, dx0:dx1][m] = label

    def render(self, state: WorldState) -> tuple[np.ndarray, np.ndarray]:
        """uint8 image and int16 id map (-1 background, -2 occluder, else toy id)."""
        intr = self.cfg.intr
        ox, oy = (int(round(v)) for v in state.head_offset)
        img = self.background[oy:oy + intr.height_px, ox:ox + intr.width_px].copy()
        ids = np.full((intr.height_px, intr.width_px), BACKGROUND_ID, np.int16)
        slots = self.slots if state.table_pos is None else state.table_pos
        for k in range(self.cfg.n_objects):
            if not state.on_table[k]:
                continue
            cx, cy = slots[k] - np.asarray(state.head_offset, dtype=np.float64)
            self._draw(img, ids, k, float(state.table_views[k]), 1.0, cx, cy)
        if state.occluder is not None:
            x0, y0, x1, y1 = state.occluder
            img[y0:y1, x0:x1] = SKIN
            ids[y0:y1, x0:x1] = OCCLUDER_ID
        if state.held_object >= 0:
            self._draw(img, ids, state.held_object, state.held_view, state.held_scale, *state.held_pos)
        return (np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8), ids


def render_frame(cfg: SessionConfig, world_state: WorldState, room: Playroom | None = None) -> FrameRecord:
    """Render one frame and derive its gaze labels from the rendered id map."""
    room = room or Playroom(cfg)
    image, ids = room.render(world_state)
    return FrameRecord(world_state.frame_idx, image, world_state.gaze, *_gaze_labels(ids, world_state))


def _gaze_labels(ids: np.ndarray, state: WorldState) -> tuple[int | None, bool]:
    target = _label_at(ids, state.gaze)
    return target, target is not None and target == state.held_object


def _label_at(ids: np.ndarray, gaze: GazePoint) -> int | None:
    h, w = ids.shape
    x, y = int(math.floor(gaze.x)), int(math.floor(gaze.y))
    if not (0 <= x < w and 0 <= y < h):
        return None
    v = int(ids[y, x])
    return v if v >= 0 else None


# ---------------------------------------------------------------------------
# session simulation
# ---------------------------------------------------------------------------

@dataclass
class Session:
    """A simulated recording: frames, gaze, labels and the world traces behind them."""

    cfg: SessionConfig
    objects: list[ObjectSpec]
    frames: np.ndarray          # (N, H, W, 3) uint8
    gaze: np.ndarray            # (N, 2) float64 pixels
    target: np.ndarray          # (N,) int, -1 = no toy
    holding: np.ndarray         # (N,) bool
    held_object: np.ndarray     # (N,) int, -1 = hands empty
    held_view: np.ndarray       # (N,) float, continuous view parameter of the held toy
    head_offset: np.ndarray     # (N, 2)
    # per-frame planned gaze phase: 0 fixation, 1 saccade, 2 micro-saccade within a toy
    phase: np.ndarray = field(default=None, repr=False)
    # per-frame fraction of pixels showing a toy
    object_fraction: np.ndarray = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.frames)

    @classmethod
    def from_arrays(cls, frames, gaze, target=None, holding=None, *, intr: CameraIntrinsics | None = None,
                    session_id: str = "recording") -> "Session":
        """Wrap an ingested recording (image sequence plus gaze) so streams can be built from it."""
        frames = np.asarray(frames, dtype=np.uint8)
        gaze = np.asarray(gaze, dtype=np.float64).reshape(-1, 2)
        n = len(frames)
        if len(gaze) != n:
            raise ValueError("frames and gaze differ in length")
        intr = intr or CameraIntrinsics(frames.shape[2], frames.shape[1], 72.0, 30.0)
        if frames.shape[1:3] != (intr.height_px, intr.width_px):
            raise ValueError("frame size does not match the intrinsics")
        target = np.full(n, -1, np.int64) if target is None else np.array([-1 if t is None else t for t in target], np.int64)
        holding = np.zeros(n, bool) if holding is None else np.asarray(holding, bool)
        cfg = SessionConfig(intr=intr, duration_s=max(n, 2) / intr.fps, session_id=session_id)
        return cls(cfg, [], frames, gaze, target, holding, np.full(n, -1, np.int64), np.zeros(n),
                   np.zeros((n, 2)), np.zeros(n, np.int8))

    def __getitem__(self, i: int) -> FrameRecord:
        t = int(self.target[i])
        return FrameRecord(i, self.frames[i], GazePoint(*self.gaze[i]), t if t >= 0 else None, bool(self.holding[i]))

    def __iter__(self) -> Iterator[FrameRecord]:
        for i in range(len(self)):
            yield self[i]

    @property
    def session_id(self) -> str:
        return self.cfg.session_id

    @property
    def intr(self) -> CameraIntrinsics:
        return self.cfg.intr

    def target_labels(self) -> list[tuple[int | None, bool]]:
        return [(int(t) if t >= 0 else None, bool(h)) for t, h in zip(self.target, self.holding)]


class _Ou:
    """Ornstein-Uhlenbeck jitter with stationary std ``sigma`` and lag-1 correlation ``rho``."""

    def __init__(self, rng, sigma, rho=0.95):
        self.rng, self.sigma, self.rho = rng, sigma, rho
        self.state = rng.normal(0, sigma, size=2)

    def __call__(self):
        self.state = self.rho * self.state + math.sqrt(1 - self.rho ** 2) * self.rng.normal(0, self.sigma, size=2)
        return self.state


def _frames(rng, mean_s, fps, minimum=2):
    return max(minimum, int(round(rng.exponential(mean_s) * fps)))


def _head_trace(cfg: SessionConfig, margin: int, n: int) -> np.ndarray:
    rng = np.random.default_rng([cfg.render_seed, 2])
    t = np.arange(n) / cfg.intr.fps
    amp = deg_to_px(cfg.head_motion.amplitude_deg, cfg.intr) if cfg.head_motion.amplitude_deg > 0 else 0.0
    p = cfg.head_motion.period_s
    ph = rng.uniform(0, 2 * np.pi, size=6)
    x = (0.55 * np.sin(2 * np.pi * t / p + ph[0]) + 0.25 * np.sin(2 * np.pi * t / (2.7 * p) + ph[1])
         + 0.2 * np.sin(2 * np.pi * t / (0.37 * p) + ph[4]))
    y = (0.5 * np.sin(2 * np.pi * t / (1.3 * p) + ph[2]) + 0.3 * np.sin(2 * np.pi * t / (3.1 * p) + ph[3])
         + 0.2 * np.sin(2 * np.pi * t / (0.31 * p) + ph[5]))
    return np.stack([margin + amp * x, margin + amp * y], axis=1)


def _occluder_trace(cfg: SessionConfig, n: int) -> list:
    out: list = [None] * n
    if not cfg.occluders:
        return out
    rng = np.random.default_rng([cfg.render_seed, 3])
    w, h = cfg.intr.width_px, cfg.intr.height_px
    fps = cfg.intr.fps
    t = _frames(rng, 8.0, fps)
    while t < n:
        length = _frames(rng, 1.5, fps)
        ow, oh = int(rng.uniform(0.15, 0.3) * w), int(rng.uniform(0.2, 0.35) * h)
        side = rng.integers(0, 2)
        y0 = int(rng.uniform(0.0, 0.4) * h)
        for k in range(length):
            if t + k >= n:
                break
            depth = min(1.0, 3.0 * min(k, length - k) / max(length, 1))
            reach = int(ow * depth)
            if reach <= 0:
                continue
            x0, x1 = (0, reach) if side == 0 else (w - reach, w)
            out[t + k] = (x0, y0, x1, y0 + oh)
        t += length + _frames(rng, 8.0, fps)
    return out


def simulate_session(cfg: SessionConfig) -> Session:
    """Simulate a full session; see :class:`GazePolicy` for the gaze model.

    Gaze alternates between fixations (exponential durations, at least two
    frames) and ballistic saccades of 2-3 frames.  Looking bouts are runs of
    fixations on one target; while a toy is held, its bouts follow
    ``mean_hold_look_s``.  Toys are only picked up or put down between bouts.
    """
    room = Playroom(cfg)
    intr = cfg.intr
    n = cfg.n_frames
    fps = intr.fps
    w, h = intr.width_px, intr.height_px
    policy = cfg.policy
    rng = np.random.default_rng([policy.policy_seed, cfg.render_seed, 4])
    px_per_deg = intr.px_per_deg
    jitter = _Ou(rng, 0.3 * px_per_deg)

    head = _head_trace(cfg, room.margin, n)
    occluders = _occluder_trace(cfg, n)
    k_obj = cfg.n_objects
    table_views = np.tile(room.initial_views, (n, 1))
    on_table = np.ones((n, k_obj), bool)
    held = np.full(n, -1, np.int64)
    held_view = np.zeros(n)
    hand = np.zeros((n, 2))
    gaze = np.zeros((n, 2))
    phase = np.zeros(n, np.int8)

    t_idx = np.arange(n) / fps
    # the held toy moves in the hand and changes distance to the eyes
    hph = np.random.default_rng([cfg.render_seed, 6]).uniform(0, 2 * np.pi, size=5)
    # slow enough that pursuing it stays well below the saccade threshold
    hand[:, 0] = 0.5 * w + 0.1 * w * (0.6 * np.sin(2 * np.pi * t_idx / 3.0 + hph[0])
                                      + 0.4 * np.sin(2 * np.pi * t_idx / 5.3 + hph[1]))
    hand[:, 1] = 0.7 * h + 0.07 * h * (0.6 * np.sin(2 * np.pi * t_idx / 3.4 + hph[2])
                                       + 0.4 * np.sin(2 * np.pi * t_idx / 4.6 + hph[3]))
    held_scale = np.round((HELD_SCALE + 0.25 * np.sin(2 * np.pi * t_idx / 2.9 + hph[4])) * 20) / 20

    views = room.initial_views.copy()
    positions = room.slots.copy()
    table_pos = np.empty((n, k_obj, 2))
    held_obj = -1
    pick_t = 0
    spin = 0.0
    view0 = 0.0
    free_until = _frames(rng, policy.mean_free_s, fps, 1)
    episode_until = 0

    def held_view_at(t):
        return (view0 + spin * (t - pick_t) / fps) % 1.0

    def target_point(target, offset, t):
        if target == "bg":
            return offset
        obj = int(target)
        if held[t] == obj:
            centre = hand[t]
            view = held_view[t]
            scale = held_scale[t]
        else:
            # eyes compensate head motion smoothly; the camera image moves in whole pixels
            centre = positions[obj] - head[t]
            view = views[obj]
            scale = 1.0
        spec = room.objects[obj]
        r = 0.5 * spec.size_px * scale
        fs = foreshortening(view)
        c, s = math.cos(spec.orientation), math.sin(spec.orientation)
        du, dv = offset[0] * fs * r, offset[1] * r
        return centre + np.array([c * du - s * dv, s * du + c * dv])

    def visible(obj, t):
        p = positions[obj] - np.round(head[t])
        r = 0.5 * room.objects[obj].size_px
        # toys the held one may slide over are not picked as look targets
        return r <= p[0] < w - r and r <= p[1] < h - r and not under_hand(p, t, 0.0)

    # the hand sweeps +-0.1 w and +-0.07 h; the held toy grows to 1.85x
    held_reach = np.array([0.1 * w, 0.07 * h])

    def under_hand(p, t, margin=1.0):
        if held_obj < 0:
            return False
        r = 0.5 * room.objects[held_obj].size_px * (HELD_SCALE + 0.25) + margin
        return bool(np.hypot(*np.maximum(np.abs(p - hand[t]) - held_reach, 0.0)) <= r)

    def clear_of_toys(p, t):
        if under_hand(p, t):
            return False
        for k in range(k_obj):
            if k != held_obj and np.hypot(*(positions[k] - head[t] - p)) <= 0.5 * room.objects[k].size_px + 2.0:
                return False
        return True

    def new_offset(prev=None):
        if prev is None:
            ang = rng.uniform(0, 2 * np.pi)
        else:
            ang = math.atan2(prev[1], prev[0]) + np.pi + rng.uniform(-0.6, 0.6)
        return 0.12 * np.array([math.cos(ang), math.sin(ang)])

    current = np.array([w / 2, h / 2], float)
    prev_target = None
    t = 0
    while t < n:
        # holding state changes only between bouts
        if held_obj < 0 and t >= free_until:
            held_obj = int(rng.integers(0, k_obj))
            pick_t = t
            view0 = views[held_obj]
            spin = float(rng.choice([-1, 1]) * rng.uniform(0.5, 1.0))
            episode_until = t + _frames(rng, policy.mean_hold_episode_s, fps)
        elif held_obj >= 0 and t >= episode_until:
            views[held_obj] = held_view_at(t)
            # the toy goes back onto a free cell of the table
            taken = {room.nearest_cell(positions[j]) for j in range(k_obj) if j != held_obj}
            free = [c for c in range(len(room.cells)) if c not in taken]
            positions[held_obj] = room.cell_position(int(rng.choice(free)), rng)
            held_obj = -1
            free_until = t + _frames(rng, policy.mean_free_s, fps, 1)

        # two bouts in a row never share a toy, otherwise their labels would merge into one bout
        if held_obj >= 0 and prev_target != held_obj and rng.random() < policy.p_look_held:
            target, mean = held_obj, policy.mean_hold_look_s
        elif rng.random() < policy.p_background:
            target, mean = "bg", None
        else:
            candidates = [k for k in range(k_obj) if k not in (held_obj, prev_target) and visible(k, t)]
            if candidates:
                target, mean = int(rng.choice(candidates)), policy.mean_look_bout_s
            else:
                target, mean = "bg", None
        bout = _frames(rng, mean, fps) if mean is not None else _frames(rng, policy.mean_fixation_s, fps)
        n_sacc = int(rng.integers(2, 4))

        if target == "bg":
            # background fixations keep clear of toys, otherwise they would be labelled as looks
            for attempt in range(40):
                if attempt < 10:
                    amp = policy.saccade_amplitude_deg * px_per_deg * rng.uniform(0.5, 1.5)
                    ang = rng.uniform(0, 2 * np.pi)
                    dest = current + amp * np.array([math.cos(ang), math.sin(ang)])
                else:
                    dest = rng.uniform([0, 0], [w, h])
                offset = np.clip(dest, [1, 1], [w - 2, h - 2])
                if clear_of_toys(offset, t):
                    break
        else:
            offset = new_offset()

        end = min(n, t + n_sacc + bout)
        # per-frame world state for this stretch
        for f in range(t, end):
            if held_obj >= 0:
                held[f] = held_obj
                held_view[f] = held_view_at(f)
                on_table[f, held_obj] = False
            table_views[f] = views
            table_pos[f] = positions

        # saccade: n_sacc motion intervals from the last fixation sample to the new fixation point
        landing = target_point(target, offset, min(t + n_sacc - 1, n - 1))
        for k in range(1, n_sacc):
            f = t + k - 1
            if f >= n:
                break
            gaze[f] = current + (landing - current) * k / n_sacc
            phase[f] = 1
        f = t + n_sacc - 1
        fix_end = f + _frames(rng, policy.mean_fixation_s, fps) if target != "bg" else end
        while f < end:
            if target != "bg" and f >= fix_end:
                # refixation within the toy: a two-frame micro-saccade to the opposite side
                prev = gaze[f - 1].copy()
                offset = new_offset(offset)
                nxt = target_point(target, offset, min(f + 1, n - 1)) + jitter()
                gaze[f] = prev + (nxt - prev) * 0.5
                phase[f] = 2
                f += 1
                fix_end = f + _frames(rng, policy.mean_fixation_s, fps)
                continue
            gaze[f] = target_point(target, offset, f) + jitter()
            f += 1
        current = gaze[end - 1].copy()
        prev_target = target
        t = end

    np.clip(gaze[:, 0], 0.0, w - 1e-3, out=gaze[:, 0])
    np.clip(gaze[:, 1], 0.0, h - 1e-3, out=gaze[:, 1])

    if policy.kind == RANDOM:
        grng = np.random.default_rng([policy.policy_seed, cfg.render_seed, 5])
        gaze = np.stack([grng.uniform(0, w, n), grng.uniform(0, h, n)], axis=1)
        phase[:] = 0
    elif policy.kind == NO_EYE_MOVEMENT:
        gaze = np.tile(gaze.mean(axis=0), (n, 1))
        phase[:] = 0

    frames = np.empty((n, h, w, 3), np.uint8)
    noise_rng = np.random.default_rng([cfg.render_seed, policy.policy_seed, 8])
    target_ids = np.full(n, -1, np.int64)
    object_fraction = np.zeros(n)
    holding = np.zeros(n, bool)
    for f in range(n):
        state = WorldState(
            frame_idx=f,
            head_offset=(head[f, 0], head[f, 1]),
            table_views=table_views[f],
            on_table=on_table[f],
            held_object=int(held[f]),
            held_view=float(held_view[f]),
            held_pos=(hand[f, 0], hand[f, 1]),
            held_scale=float(held_scale[f]),
            occluder=occluders[f],
            gaze=GazePoint(float(gaze[f, 0]), float(gaze[f, 1])),
            table_pos=table_pos[f],
        )
        image, ids = room.render(state)
        record = FrameRecord(f, image, state.gaze, *_gaze_labels(ids, state))
        object_fraction[f] = float(np.mean(ids >= 0))
        frames[f] = record.image
        if cfg.sensor_noise > 0:
            noisy = record.image + noise_rng.normal(0.0, 255.0 * cfg.sensor_noise, size=record.image.shape)
            frames[f] = np.clip(np.round(noisy), 0, 255).astype(np.uint8)
        target_ids[f] = -1 if record.target_object is None else record.target_object
        holding[f] = record.holding

    return Session(cfg, room.objects, frames, gaze, target_ids, holding, held, held_view,
                   np.round(head), phase, object_fraction)


# ---------------------------------------------------------------------------
# oracle views
# ---------------------------------------------------------------------------

@dataclass
class OracleViews:
    images: np.ndarray    # (K * n_views, S, S, 3) uint8
    labels: np.ndarray    # (K * n_views,) object ids
    views: np.ndarray     # view parameter of each image
    scales: np.ndarray


def _view_grid(n_views: int) -> tuple[int, int]:
    for n_scales in (4, 2, 1):
        if n_views % n_scales == 0 and n_views // n_scales >= 4:
            return n_views // n_scales, n_scales
    return n_views, 1


def generate_oracle_views(objects: Sequence[ObjectSpec], n_views: int = 64, background: str = "blank",
                          crop_size_px: int = 32, seed: int = 0,
                          scale_range: tuple[float, float] = (1.1, 1.9)) -> OracleViews:
    """Each toy rendered ``n_views`` times over an angle x scale grid, centred in a square image.

    Images of one toy are ordered as a continuous sweep (angles within a scale,
    scales ascending) so that consecutive images are neighbouring views.
    """
    if n_views < 1:
        raise ValueError("n_views must be at least 1")
    if background not in ("blank", "clutter"):
        raise ValueError(f"unknown background {background!r}")
    n_angles, n_scales = _view_grid(n_views)
    scales = np.linspace(*scale_range, n_scales) if n_scales > 1 else np.array([float(np.mean(scale_range))])
    rng = np.random.default_rng([seed, 11])
    s = crop_size_px
    images, labels, view_list, scale_list = [], [], [], []
    for spec in objects:
        fit = 0.95 * s / spec.size_px
        for sc in scales:
            for a in range(n_angles):
                view = a / n_angles
                scale = min(sc, fit)
                if background == "blank":
                    canvas = np.zeros((s, s, 3), np.float32)
                else:
                    canvas = make_clutter(rng, s, s)
                ids = np.full((s, s), BACKGROUND_ID, np.int16)
                rgb, mask = render_object(spec, view, scale)
                Playroom._paste(canvas, ids, rgb, mask, (s - 1) / 2, (s - 1) / 2, spec.object_id)
                images.append((np.clip(canvas, 0, 1) * 255 + 0.5).astype(np.uint8))
                labels.append(spec.object_id)
                view_list.append(view)
                scale_list.append(scale)
    return OracleViews(np.stack(images), np.array(labels), np.array(view_list), np.array(scale_list))


def with_policy(cfg: SessionConfig, policy: GazePolicy) -> SessionConfig:
    return replace(cfg, policy=policy)
