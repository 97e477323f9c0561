"""Time-contrastive self-supervised training (SimCLR-TT and BYOL-TT).

Positive pairs are frames of the same continuous recording separated by a
temporal offset of at most ``round(delta_t_s * fps)`` frames; there are no
image augmentations, time takes their place.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .nn import functional as F
from .nn.layers import MLP, Encoder, images_to_tensor
from .nn.optim import AdamW, ema_update
from .nn.tensor import Tensor, concat, logsumexp, no_grad

log = logging.getLogger(__name__)

SIMCLR_TT = "SimCLR-TT"
BYOL_TT = "BYOL-TT"
METHODS = (SIMCLR_TT, BYOL_TT)


@dataclass
class SslConfig:
    method: str = SIMCLR_TT
    delta_t_s: float = 1.0 / 30.0
    temperature: float = 0.08
    batch_size: int = 64
    epochs: int = 30
    lr: float = 1e-2
    weight_decay: float = 1e-4
    ema_momentum: float = 0.99
    seed: int = 0
    # offsets uniform in 1..max (default) or always the maximum lag
    fixed_lag: bool = False
    symmetric_byol: bool = False
    # None -> ceil(total frames / batch_size)
    steps_per_epoch: int | None = None
    widths: tuple[int, ...] = (16, 32, 64, 128)
    groups: int = 4
    proj_hidden: int = 128
    proj_dim: int = 64

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if not self.delta_t_s > 0:
            raise ValueError("delta_t_s must be positive")
        if not 0.0 <= self.ema_momentum <= 1.0:
            raise ValueError("ema_momentum must lie in [0, 1]")
        self.widths = tuple(int(w) for w in self.widths)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SslConfig":
        d = dict(d)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(**d)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _check_unit_norm(z: np.ndarray, tol: float = 1e-4) -> None:
    norms = np.linalg.norm(np.asarray(z, dtype=np.float64), axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ValueError(f"embeddings must be L2-normalised (max |norm-1| = {np.max(np.abs(norms - 1.0)):.2e})")


def simclr_tt_loss(z_a: Tensor, z_b: Tensor, temperature: float) -> Tensor:
    """Time-contrastive InfoNCE over a batch of ``N`` temporal pairs.

    ``z_a[i]`` and ``z_b[i]`` are the unit-norm embeddings of a pair.  Each of
    the ``2N`` embeddings acts once as anchor; its candidates are all *other*
    embeddings of the batch, so the positive stays in the denominator and only
    the anchor itself is excluded.  Returns the mean over all ``2N`` anchors.
    """
    if z_a.shape != z_b.shape or z_a.ndim != 2:
        raise ValueError(f"paired embeddings must share a 2-D shape, got {z_a.shape} and {z_b.shape}")
    n = z_a.shape[0]
    if n < 2:
        raise ValueError("need at least two pairs (four embeddings)")
    _check_unit_norm(z_a.data)
    _check_unit_norm(z_b.data)

    z = concat([z_a, z_b], axis=0)
    logits = (z @ z.T) * (1.0 / temperature)
    self_mask = np.zeros((2 * n, 2 * n), dtype=z.dtype)
    np.fill_diagonal(self_mask, -np.inf)
    denom = logsumexp(logits + self_mask, axis=1)
    rows = np.arange(2 * n)
    partner = (rows + n) % (2 * n)
    positive = logits[rows, partner]
    return (denom - positive).mean()


def byol_tt_loss(q_online: Tensor, z_target: Tensor) -> Tensor:
    """Mean over the batch of ``2 - 2 cos(q, z_target)``; values lie in [0, 4].

    The caller is responsible for ``z_target`` carrying no gradient (it comes
    from the EMA network under ``no_grad``).
    """
    if q_online.shape != z_target.shape:
        raise ValueError(f"shape mismatch: {q_online.shape} vs {z_target.shape}")
    q = F.l2_normalize(q_online, axis=1)
    z = F.l2_normalize(z_target, axis=1)
    cos = (q * z).sum(axis=1)
    return (2.0 - 2.0 * cos).mean()


# ---------------------------------------------------------------------------
# temporal pair sampling
# ---------------------------------------------------------------------------

@dataclass
class PairBatch:
    anchors: np.ndarray
    positives: np.ndarray
    offsets_frames: np.ndarray
    # (manifest index, record index) of every anchor, for bookkeeping/tests
    sources: np.ndarray = field(repr=False, default=None)


def max_offset_frames(delta_t_s: float, fps: float) -> int:
    if delta_t_s < 1.0 / fps - 1e-9:
        raise ValueError(f"delta_t_s={delta_t_s} is below one frame interval (1/{fps} s)")
    return max(1, int(round(delta_t_s * fps)))


class PairSampler:
    """Draws temporal positive pairs that never cross a sequence boundary.

    A sequence is a run of consecutive ``frame_idx`` inside one manifest, so
    neither session boundaries nor gaps (e.g. frames dropped by the object
    fixation filter) are ever bridged.
    """

    def __init__(self, manifests: Sequence, delta_t_s: float, fixed_lag: bool = False):
        self.manifests = list(manifests)
        if not self.manifests:
            raise ValueError("no manifests given")
        m_idx, r_idx, limit = [], [], []
        self.max_offsets = []
        for k, manifest in enumerate(self.manifests):
            d = max_offset_frames(delta_t_s, manifest.intr.fps)
            self.max_offsets.append(d)
            for start, stop in manifest.segments():
                positions = np.arange(start, stop - 1)
                room = (stop - 1) - positions
                if fixed_lag:
                    keep = room >= d
                    positions, room = positions[keep], room[keep]
                m_idx.append(np.full(len(positions), k))
                r_idx.append(positions)
                limit.append(np.minimum(room, d))
        self.anchor_manifest = np.concatenate(m_idx) if m_idx else np.zeros(0, int)
        self.anchor_record = np.concatenate(r_idx) if r_idx else np.zeros(0, int)
        self.anchor_limit = np.concatenate(limit) if limit else np.zeros(0, int)
        if len(self.anchor_record) == 0:
            raise ValueError("no valid anchor positions: every sequence is too short for a pair")
        self.fixed_lag = fixed_lag

    @property
    def n_anchors(self) -> int:
        return len(self.anchor_record)

    def sample_indices(self, batch_size: int, rng: np.random.Generator):
        pick = rng.integers(0, self.n_anchors, size=batch_size)
        limit = self.anchor_limit[pick]
        if self.fixed_lag:
            offsets = limit.copy()
        else:
            offsets = 1 + np.floor(rng.random(batch_size) * limit).astype(np.int64)
        assert np.all((offsets >= 1) & (offsets <= limit))
        return self.anchor_manifest[pick], self.anchor_record[pick], offsets

    def sample(self, batch_size: int, rng: np.random.Generator) -> PairBatch:
        m, r, off = self.sample_indices(batch_size, rng)
        anchors = np.stack([self.manifests[a].crops[b] for a, b in zip(m, r)])
        positives = np.stack([self.manifests[a].crops[b + o] for a, b, o in zip(m, r, off)])
        return PairBatch(anchors, positives, off, np.stack([m, r], axis=1))


def sample_pairs(manifests: Sequence, delta_t_s: float, batch_size: int, rng: np.random.Generator,
                 fixed_lag: bool = False) -> PairBatch:
    return PairSampler(manifests, delta_t_s, fixed_lag).sample(batch_size, rng)


# ---------------------------------------------------------------------------
# model and training loop
# ---------------------------------------------------------------------------

class SslModel:
    """Online encoder/projector (+ predictor and EMA target for BYOL-TT)."""

    def __init__(self, cfg: SslConfig):
        self.cfg = cfg
        seed = cfg.seed
        self.encoder = Encoder(cfg.widths, cfg.groups, seed=seed)
        self.projector = MLP(self.encoder.feature_dim, cfg.proj_hidden, cfg.proj_dim, seed=seed + 1)
        self.predictor = None
        self.target_encoder = None
        self.target_projector = None
        if cfg.method == BYOL_TT:
            self.predictor = MLP(cfg.proj_dim, cfg.proj_hidden, cfg.proj_dim, seed=seed + 2)
            self.target_encoder = self.encoder.clone().requires_grad_(False)
            self.target_projector = self.projector.clone().requires_grad_(False)

    def online_parameters(self) -> dict:
        params = {}
        params.update(self.encoder.named_parameters("encoder."))
        params.update(self.projector.named_parameters("projector."))
        if self.predictor is not None:
            params.update(self.predictor.named_parameters("predictor."))
        return params

    def target_parameters(self) -> dict:
        if self.target_encoder is None:
            return {}
        params = {}
        params.update(self.target_encoder.named_parameters("encoder."))
        params.update(self.target_projector.named_parameters("projector."))
        return params

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: p.data.copy() for k, p in self.online_parameters().items()}
        state.update({f"target.{k}": p.data.copy() for k, p in self.target_parameters().items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.online_parameters().items():
            p.data = np.asarray(state[k], dtype=p.dtype).copy()
        for k, p in self.target_parameters().items():
            p.data = np.asarray(state[f"target.{k}"], dtype=p.dtype).copy()

    def embed(self, x: Tensor) -> Tensor:
        return self.projector(self.encoder(x))

    def target_embed(self, x: Tensor) -> Tensor:
        with no_grad():
            return self.target_projector(self.target_encoder(x))

    def loss(self, anchors: np.ndarray, positives: np.ndarray) -> Tensor:
        n = len(anchors)
        cfg = self.cfg
        if cfg.method == SIMCLR_TT:
            z = F.l2_normalize(self.embed(images_to_tensor(np.concatenate([anchors, positives]))), axis=1)
            return simclr_tt_loss(z[:n], z[n:], cfg.temperature)
        if cfg.symmetric_byol:
            both = images_to_tensor(np.concatenate([anchors, positives]))
            swapped = images_to_tensor(np.concatenate([positives, anchors]))
            return byol_tt_loss(self.predictor(self.embed(both)), self.target_embed(swapped))
        q = self.predictor(self.embed(images_to_tensor(anchors)))
        return byol_tt_loss(q, self.target_embed(images_to_tensor(positives)))

    def update_target(self) -> None:
        if self.target_encoder is None:
            return
        online = {k: p.data for k, p in self.online_parameters().items() if not k.startswith("predictor.")}
        target = {k: p.data for k, p in self.target_parameters().items()}
        ema_update(online, target, self.cfg.ema_momentum)


@dataclass
class TrainResult:
    model: SslModel
    loss_curve: list[float]
    steps_per_epoch: int


def _assert_finite(model: SslModel, epoch: int) -> None:
    for name, p in {**model.online_parameters(), **model.target_parameters()}.items():
        if not np.all(np.isfinite(p.data)):
            raise FloatingPointError(f"parameter {name} became non-finite in epoch {epoch}")


def train(manifests: Sequence, cfg: SslConfig,
          augment: Callable[[np.ndarray, np.random.Generator], np.ndarray] | None = None,
          progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """Train an encoder on temporal pairs drawn from ``manifests``.

    ``augment`` is an optional hook applied to anchor and positive batches
    (uint8 NHWC in, uint8 NHWC out); by default no augmentation is used.
    """
    if not manifests:
        raise ValueError("train() needs at least one manifest")
    rng = np.random.default_rng(cfg.seed)
    sampler = PairSampler(manifests, cfg.delta_t_s, cfg.fixed_lag)
    model = SslModel(cfg)
    optimizer = AdamW(model.online_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    total_frames = sum(len(m.crops) for m in manifests)
    steps = cfg.steps_per_epoch or math.ceil(total_frames / cfg.batch_size)

    curve: list[float] = []
    for epoch in range(cfg.epochs):
        losses = []
        for step in range(steps):
            batch = sampler.sample(cfg.batch_size, rng)
            anchors, positives = batch.anchors, batch.positives
            if augment is not None:
                anchors, positives = augment(anchors, rng), augment(positives, rng)
            optimizer.zero_grad()
            loss = model.loss(anchors, positives)
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss in epoch {epoch}, batch {step}")
            loss.backward()
            optimizer.step()
            model.update_target()
            losses.append(value)
        _assert_finite(model, epoch)
        curve.append(float(np.mean(losses)))
        log.debug("epoch %d mean loss %.4f", epoch, curve[-1])
        if progress is not None:
            progress(epoch, curve[-1])
    return TrainResult(model, curve, steps)
