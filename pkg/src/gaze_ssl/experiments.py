"""Experiment matrices: configuration, cached training, probing and persistence.

A run is fully determined by its YAML config.  Sessions are simulated once
and stored under ``<out>/sessions``; every (strategy, crop size, method,
delta t, seed) cell trains an encoder whose checkpoint is cached under a key
derived from the training streams' content hashes and the SSL config, then
probed with a linear classifier on Objects-Fixation crops.
"""

from __future__ import annotations

import fnmatch
import hashlib
import itertools
import json
import logging
import math
import os
import shutil
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .evaluation import export_embeddings, extract_features, train_probe
from .events import BehaviorMetrics, GazeTrace, compute_metrics, detect_saccades, write_metrics_csv
from .geometry import CameraIntrinsics
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .playroom import (
    ADULT, NO_EYE_MOVEMENT, RANDOM, TODDLER, GazePolicy, HeadMotion, Playroom, Session, SessionConfig,
    simulate_session, with_policy,
)
from .ssl import METHODS, SslConfig, SslModel, train
from .stats import pearson, ttest_ind
from .streams import (
    BLANK_BACKGROUND, HUMAN_GAZE, NO_EYE_MOVEMENT as NO_EYE_STREAM, OBJECTS_FIXATION, RANDOM_GAZE, SplitSpec,
    StreamManifest, build_stream, resample, split_indices, write_manifest,
)

log = logging.getLogger(__name__)

OUT_ENV = "GAZE_SSL_OUT"

ADULT_SUFFIX = "-adult"
# matrix strategy -> (policy the session is simulated with, stream built from it)
STRATEGY_STREAMS = {
    TODDLER: (TODDLER, HUMAN_GAZE),
    ADULT: (ADULT, HUMAN_GAZE),
    RANDOM: (TODDLER, RANDOM_GAZE),
    NO_EYE_MOVEMENT: (TODDLER, NO_EYE_STREAM),
    OBJECTS_FIXATION: (TODDLER, OBJECTS_FIXATION),
    BLANK_BACKGROUND: (TODDLER, BLANK_BACKGROUND),
}
MATRIX_STRATEGIES = tuple(STRATEGY_STREAMS)

ACCURACY_COLUMNS = ("cell", "strategy", "method", "seed", "delta_t", "crop_size", "accuracy", "status")
STATS_COLUMNS = ("comparison", "statistic", "p_value", "df", "n")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def session_config_to_dict(cfg: SessionConfig) -> dict:
    return asdict(cfg)


def session_config_from_dict(d: dict) -> SessionConfig:
    d = dict(d)
    if "intr" in d and isinstance(d["intr"], dict):
        d["intr"] = CameraIntrinsics(**d["intr"])
    if "policy" in d and isinstance(d["policy"], dict):
        d["policy"] = GazePolicy(**d["policy"])
    if "head_motion" in d and isinstance(d["head_motion"], dict):
        d["head_motion"] = HeadMotion(**d["head_motion"])
    known = {f.name for f in fields(SessionConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown session keys: {sorted(unknown)}")
    return SessionConfig(**d)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class ProbeSettings:
    lr: float = 1e-2
    weight_decay: float = 1e-4
    max_epochs: int = 500
    tol: float = 1e-4
    # probe images are Objects-Fixation crops at this size, whatever the encoder was trained on
    image_size: int = 32
    resample: str | None = None
    top_k: int = 5

    def __post_init__(self):
        if self.resample not in (None, "undersample", "oversample"):
            raise ValueError(f"unknown resample mode {self.resample!r}")
        if self.image_size < 4:
            raise ValueError("probe image_size must be at least 4")


@dataclass(frozen=True)
class Cell:
    strategy: str
    crop_size: int
    method: str
    delta_t: float
    seed: int

    @property
    def cell_id(self) -> str:
        return f"{self.strategy}_c{self.crop_size}_{self.method}_dt{self.delta_t:.4f}_s{self.seed}"

    def group(self) -> tuple:
        return self.strategy, self.crop_size, self.method, self.delta_t


@dataclass
class ExperimentConfig:
    sessions: list[SessionConfig]
    strategies: list[str] = field(default_factory=lambda: [TODDLER, RANDOM])
    crop_sizes: list[int] = field(default_factory=lambda: [32])
    methods: list[str] = field(default_factory=lambda: ["SimCLR-TT"])
    delta_ts: list[float] = field(default_factory=lambda: [1.0 / 30.0])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    ssl: SslConfig = field(default_factory=SslConfig)
    split: SplitSpec = field(default_factory=lambda: SplitSpec(unit="session", train_fraction=2 / 3))
    probe: ProbeSettings = field(default_factory=ProbeSettings)
    # explicit cells (dicts with strategy / crop_size / delta_t / method); None means the full grid
    cells: list[dict] | None = None
    oracle_views: int = 64
    # sessions that only feed the probe; None means the probe uses the split of ``sessions``
    probe_sessions: list[SessionConfig] | None = None
    output_root: str = "gaze_ssl_out"

    def __post_init__(self):
        if not self.sessions:
            raise ValueError("at least one session is required")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        ids = [s.session_id for s in self.sessions + (self.probe_sessions or [])]
        if len(set(ids)) != len(ids):
            raise ValueError("session ids must be unique")
        intr = self.sessions[0].intr
        if any(s.intr != intr for s in self.sessions):
            raise ValueError("all sessions must share camera intrinsics")
        for c in self.grid():
            if c.strategy not in MATRIX_STRATEGIES:
                raise ValueError(f"unknown strategy {c.strategy!r}")
            if c.method not in METHODS:
                raise ValueError(f"unknown method {c.method!r}")
            if not 1 <= c.crop_size <= min(intr.width_px, intr.height_px):
                raise ValueError(f"crop size {c.crop_size} does not fit {intr.width_px}x{intr.height_px} frames")
            if c.delta_t < 1.0 / intr.fps - 1e-9:
                raise ValueError(f"delta_t {c.delta_t} is shorter than one frame")

    @property
    def intr(self) -> CameraIntrinsics:
        return self.sessions[0].intr

    def grid(self) -> list[Cell]:
        if self.cells is None:
            combos = [dict(strategy=s, crop_size=c, method=m, delta_t=d)
                      for s, c, m, d in itertools.product(self.strategies, self.crop_sizes, self.methods, self.delta_ts)]
        else:
            combos = [dict(dict(method=self.methods[0], delta_t=self.delta_ts[0], crop_size=self.crop_sizes[0]), **c)
                      for c in self.cells]
        return [Cell(str(c["strategy"]), int(c["crop_size"]), str(c["method"]), float(c["delta_t"]), int(seed))
                for c in combos for seed in self.seeds]

    def to_dict(self) -> dict:
        return {
            "sessions": [session_config_to_dict(s) for s in self.sessions],
            "strategies": list(self.strategies),
            "crop_sizes": [int(c) for c in self.crop_sizes],
            "methods": list(self.methods),
            "delta_ts": [float(d) for d in self.delta_ts],
            "seeds": [int(s) for s in self.seeds],
            "ssl": self.ssl.to_dict(),
            "split": asdict(self.split),
            "probe": asdict(self.probe),
            "cells": self.cells,
            "oracle_views": self.oracle_views,
            "probe_sessions": None if self.probe_sessions is None
            else [session_config_to_dict(s) for s in self.probe_sessions],
        }

    def canonical(self) -> str:
        """Canonical JSON of everything that affects results (the output root is excluded)."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def out(self) -> Path:
        return Path(os.environ.get(OUT_ENV) or self.output_root)


def _delta_t(v) -> float:
    # "1/30" style fractions are handy in YAML
    if isinstance(v, str) and "/" in v:
        a, b = v.split("/")
        return float(a) / float(b)
    return float(v)


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    defaults = d.pop("session_defaults", {}) or {}
    raw_sessions = d.pop("sessions", None)
    if isinstance(raw_sessions, dict):
        # {count: N, ...}: N sessions with render seeds 0..N-1
        count = int(raw_sessions["count"])
        first = int(raw_sessions.get("first_seed", 0))
        raw_sessions = [dict(session_id=f"s{first + i}", render_seed=first + i, policy={"policy_seed": first + i})
                        for i in range(count)]
    if not raw_sessions:
        raise ValueError("config needs a non-empty 'sessions' list")
    sessions = [session_config_from_dict(_merge(defaults, s)) for s in raw_sessions]
    kw: dict = {"sessions": sessions}
    if d.get("probe_sessions") is not None:
        kw["probe_sessions"] = [session_config_from_dict(_merge(defaults, s)) for s in d.pop("probe_sessions")]
    d.pop("probe_sessions", None)
    for key in ("strategies", "crop_sizes", "methods", "seeds", "cells", "oracle_views", "output_root"):
        if key in d:
            kw[key] = d.pop(key)
    if "delta_ts" in d:
        kw["delta_ts"] = [_delta_t(v) for v in d.pop("delta_ts")]
    if "cells" in kw and kw["cells"] is not None:
        kw["cells"] = [dict(c, **({"delta_t": _delta_t(c["delta_t"])} if "delta_t" in c else {})) for c in kw["cells"]]
    if "ssl" in d:
        ssl = dict(d.pop("ssl"))
        if "delta_t_s" in ssl:
            ssl["delta_t_s"] = _delta_t(ssl["delta_t_s"])
        kw["ssl"] = SslConfig.from_dict(ssl)
    if "split" in d:
        kw["split"] = SplitSpec(**d.pop("split"))
    if "probe" in d:
        kw["probe"] = ProbeSettings(**d.pop("probe"))
    if d:
        raise ValueError(f"unknown config keys: {sorted(d)}")
    return ExperimentConfig(**kw)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# atomic files
# ---------------------------------------------------------------------------

def atomic_write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[dict], config_hash: str) -> Path:
    lines = [f"# config_hash={config_hash}", ",".join(columns)]
    lines += [",".join(_csv_value(r.get(c)) for c in columns) for r in rows]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path: str | os.PathLike) -> tuple[str | None, list[dict]]:
    """Rows as string dicts plus the embedded config hash."""
    config_hash = None
    header = None
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# config_hash="):
            config_hash = line.split("=", 1)[1]
            continue
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if header is None:
            header = parts
            continue
        rows.append(dict(zip(header, parts)))
    return config_hash, rows


# ---------------------------------------------------------------------------
# sessions on disk
# ---------------------------------------------------------------------------

_SESSION_ARRAYS = ("frames", "gaze", "target", "holding", "held_object", "held_view", "head_offset", "phase",
                   "object_fraction")


def session_dir(out: Path, session_id: str) -> Path:
    return out / "sessions" / session_id


def save_session(session: Session, root: Path, overwrite: bool = False) -> Path:
    final = session_dir(root, session.session_id)
    if final.exists() and not overwrite:
        raise FileExistsError(f"{final} exists (use --force to replace it)")
    tmp = final.with_name(final.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    for name in _SESSION_ARRAYS:
        np.save(tmp / f"{name}.npy", getattr(session, name), allow_pickle=False)
    (tmp / "config.json").write_text(json.dumps(session_config_to_dict(session.cfg), sort_keys=True, indent=1) + "\n")
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)
    return final


def load_session(path: Path) -> Session:
    cfg = session_config_from_dict(json.loads((path / "config.json").read_text()))
    arrays = {name: np.load(path / f"{name}.npy", allow_pickle=False) for name in _SESSION_ARRAYS}
    objects = Playroom(cfg).objects
    return Session(cfg, objects, **arrays)


def adult_variant(cfg: SessionConfig) -> SessionConfig:
    """The same world replayed with adult-like gaze."""
    p = cfg.policy
    return replace(with_policy(cfg, GazePolicy.adult(policy_seed=p.policy_seed)),
                   session_id=cfg.session_id + ADULT_SUFFIX)


def session_configs(cfg: ExperimentConfig) -> list[SessionConfig]:
    out = list(cfg.sessions) + list(cfg.probe_sessions or [])
    if ADULT in {c.strategy for c in cfg.grid()}:
        out += [adult_variant(s) for s in cfg.sessions]
    return out


def simulate_all(cfg: ExperimentConfig, force: bool = False) -> list[Path]:
    """Simulate every configured session; refuses to overwrite unless ``force``."""
    out = cfg.out()
    cfgs = session_configs(cfg)
    if not force:
        existing = [session_dir(out, s.session_id) for s in cfgs if session_dir(out, s.session_id).exists()]
        if existing:
            raise FileExistsError(f"{len(existing)} session directories exist (use --force), e.g. {existing[0]}")
    return [save_session(simulate_session(s), out, overwrite=force) for s in cfgs]


class SessionStore:
    """Sessions for a config: read from disk when present, simulated (deterministically) otherwise."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self._cache: dict[str, Session] = {}

    def get(self, session_cfg: SessionConfig) -> Session:
        sid = session_cfg.session_id
        if sid not in self._cache:
            path = session_dir(self.cfg.out(), sid)
            if path.exists():
                self._cache[sid] = load_session(path)
            else:
                self._cache[sid] = simulate_session(session_cfg)
        return self._cache[sid]

    def for_policy(self, policy: str, session_cfgs: Sequence[SessionConfig]) -> list[Session]:
        return [self.get(adult_variant(s) if policy == ADULT else s) for s in session_cfgs]


# ---------------------------------------------------------------------------
# probe data and session split
# ---------------------------------------------------------------------------

def session_split(cfg: ExperimentConfig, sessions: Sequence[SessionConfig] | None = None
                  ) -> tuple[list[SessionConfig], list[SessionConfig]]:
    """Sessions used for SSL training and probe training, and held-out probe-test sessions.

    With a frame-block split every session serves both roles.
    """
    sessions = list(cfg.sessions if sessions is None else sessions)
    if cfg.split.unit != "session":
        return sessions, sessions
    n = len(sessions)
    if n < 2:
        raise ValueError("a session-level split needs at least two sessions")
    order = np.random.default_rng(cfg.split.split_seed).permutation(n)
    n_train = min(n - 1, max(1, int(round(cfg.split.train_fraction * n))))
    train_ids = sorted(order[:n_train])
    test_ids = sorted(order[n_train:])
    return [sessions[i] for i in train_ids], [sessions[i] for i in test_ids]


@dataclass
class ProbeData:
    images: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray


def probe_data(cfg: ExperimentConfig, store: SessionStore) -> ProbeData:
    train_cfgs, test_cfgs = session_split(cfg, cfg.probe_sessions)
    size = cfg.probe.image_size
    if cfg.split.unit == "session":
        tr = [build_stream(s, OBJECTS_FIXATION, size) for s in store.for_policy(TODDLER, train_cfgs)]
        te = [build_stream(s, OBJECTS_FIXATION, size) for s in store.for_policy(TODDLER, test_cfgs)]
        images = np.concatenate([m.crops for m in tr + te])
        labels = np.concatenate([m.labels for m in tr + te])
        n_tr = sum(len(m) for m in tr)
        train_idx, test_idx = np.arange(n_tr), np.arange(n_tr, len(labels))
    else:
        parts, train_idx, test_idx = [], [], []
        offset = 0
        for m in (build_stream(s, OBJECTS_FIXATION, size) for s in store.for_policy(TODDLER, train_cfgs)):
            a, b = split_indices(m, cfg.split)
            train_idx.append(a + offset)
            test_idx.append(b + offset)
            parts.append(m)
            offset += len(m)
        images = np.concatenate([m.crops for m in parts])
        labels = np.concatenate([m.labels for m in parts])
        train_idx, test_idx = np.concatenate(train_idx), np.concatenate(test_idx)
    if cfg.probe.resample is not None:
        keep = resample(labels[train_idx], cfg.probe.resample, cfg.probe.top_k, cfg.split.split_seed)
        train_idx = train_idx[keep]
    return ProbeData(images, labels, train_idx, test_idx)


# ---------------------------------------------------------------------------
# training streams and the encoder cache
# ---------------------------------------------------------------------------

def training_streams(cfg: ExperimentConfig, cell: Cell, store: SessionStore,
                     session_cfgs: Sequence[SessionConfig] | None = None) -> list[StreamManifest]:
    if session_cfgs is None:
        session_cfgs = cfg.sessions if cfg.probe_sessions is not None else session_split(cfg)[0]
    policy, stream = STRATEGY_STREAMS[cell.strategy]
    sessions = store.for_policy(policy, session_cfgs)
    if stream == BLANK_BACKGROUND:
        # one oracle set: every session shows the same toys
        return [build_stream(sessions[0], BLANK_BACKGROUND, cell.crop_size, n_views=cfg.oracle_views,
                             session_id="oracle")]
    return [build_stream(s, stream, cell.crop_size, seed=cell.seed) for s in sessions]


def cell_ssl_config(cfg: ExperimentConfig, cell: Cell) -> SslConfig:
    return replace(cfg.ssl, method=cell.method, delta_t_s=cell.delta_t, seed=cell.seed)


def cache_key(manifests: Sequence[StreamManifest], ssl_cfg: SslConfig) -> str:
    payload = json.dumps({"streams": [m.content_hash() for m in manifests], "ssl": ssl_cfg.to_dict()},
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:20]


def trained_model(manifests: Sequence[StreamManifest], ssl_cfg: SslConfig, cache_root: Path,
                  force: bool = False) -> tuple[SslModel, dict]:
    """Train, or load the cached encoder for exactly these streams and settings."""
    key = cache_key(manifests, ssl_cfg)
    ckpt = cache_root / key / "model.ckpt"
    meta_path = cache_root / key / "train.json"
    model = SslModel(ssl_cfg)
    if ckpt.exists() and meta_path.exists() and not force:
        model.load_state_dict(load_checkpoint(ckpt))
        meta = json.loads(meta_path.read_text())
        meta["cached"] = True
        return model, meta
    started = time.perf_counter()
    result = train(manifests, ssl_cfg)
    save_checkpoint(ckpt, result.model.state_dict())
    meta = {"key": key, "loss_curve": result.loss_curve, "steps_per_epoch": result.steps_per_epoch,
            "ssl": ssl_cfg.to_dict(), "train_seconds": time.perf_counter() - started}
    atomic_write_text(meta_path, json.dumps(meta, sort_keys=True, indent=1) + "\n")
    meta["cached"] = False
    return result.model, meta


def probe_encoder(model: SslModel, data: ProbeData, settings: ProbeSettings) -> float:
    feats = extract_features(model.encoder, data.images)
    res = train_probe(feats, data.labels, data.train_idx, data.test_idx, lr=settings.lr,
                      weight_decay=settings.weight_decay, max_epochs=settings.max_epochs, tol=settings.tol)
    return float(res.accuracy)


# ---------------------------------------------------------------------------
# running cells
# ---------------------------------------------------------------------------

def select_cells(cells: Sequence[Cell], pattern: str | None) -> list[Cell]:
    if not pattern:
        return list(cells)
    return [c for c in cells if fnmatch.fnmatchcase(c.cell_id, pattern) or pattern in c.cell_id]


def with_seeds(cfg: ExperimentConfig, seeds: Sequence[int] | None) -> ExperimentConfig:
    return cfg if not seeds else replace(cfg, seeds=[int(s) for s in seeds])


def _cell_row(cell: Cell, accuracy: float | None, status: str) -> dict:
    return {"cell": cell.cell_id, "strategy": cell.strategy, "method": cell.method, "seed": cell.seed,
            "delta_t": cell.delta_t, "crop_size": cell.crop_size, "accuracy": accuracy, "status": status}


def run_cell(cfg: ExperimentConfig, cell: Cell, store: SessionStore | None = None, data: ProbeData | None = None,
             force: bool = False, probe: bool = True) -> dict:
    """Train (or load) and probe one cell; failures are reported in the row rather than raised."""
    out = cfg.out()
    result_path = out / "cells" / f"{cell.cell_id}.json"
    try:
        store = store or SessionStore(cfg)
        manifests = training_streams(cfg, cell, store)
        ssl_cfg = cell_ssl_config(cfg, cell)
        model, meta = trained_model(manifests, ssl_cfg, out / "cache", force)
        accuracy = None
        if probe:
            data = data or probe_data(cfg, store)
            accuracy = probe_encoder(model, data, cfg.probe)
        row = _cell_row(cell, accuracy, "ok")
        record = dict(row, cache_key=meta.get("key") or cache_key(manifests, ssl_cfg),
                      final_loss=meta["loss_curve"][-1] if meta.get("loss_curve") else None,
                      train_seconds=meta.get("train_seconds"), config_hash=cfg.config_hash())
    except Exception as exc:  # a failing cell must not stop the matrix
        log.error("cell %s failed: %s", cell.cell_id, exc)
        row = _cell_row(cell, None, f"failed: {type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " "))
        record = dict(row, traceback=traceback.format_exc(), config_hash=cfg.config_hash())
    atomic_write_text(result_path, json.dumps(record, sort_keys=True, indent=1) + "\n")
    return row


def _run_cell_job(args) -> dict:
    cfg, cell, force = args
    return run_cell(cfg, cell, force=force)


def comparison_stats(rows: Sequence[dict]) -> list[dict]:
    """Pooled t-tests across seeds between every pair of (strategy, crop, method, delta t) groups."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        if r["status"] == "ok" and r["accuracy"] is not None:
            key = (r["strategy"], int(r["crop_size"]), r["method"], float(r["delta_t"]))
            groups.setdefault(key, []).append(float(r["accuracy"]))
    out = []
    keys = sorted(groups)
    for a, b in itertools.combinations(keys, 2):
        if len(groups[a]) < 2 or len(groups[b]) < 2:
            continue
        res = ttest_ind(groups[a], groups[b])
        out.append({"comparison": f"{_group_name(a)} vs {_group_name(b)}", "statistic": res.statistic,
                    "p_value": res.p_value, "df": res.df, "n": res.n})
    return out


def _group_name(key: tuple) -> str:
    strategy, crop, method, dt = key
    return f"{strategy}@c{crop}/{method}/dt{dt:.4f}"


@dataclass
class RunResult:
    config_hash: str
    rows: list[dict]
    stats: list[dict]
    accuracy_csv: Path
    stats_csv: Path

    @property
    def ok(self) -> bool:
        return all(r["status"] == "ok" for r in self.rows)

    def mean_accuracy(self, strategy: str, crop_size: int | None = None, delta_t: float | None = None,
                      method: str | None = None) -> float:
        return float(np.mean(self.accuracies(strategy, crop_size, delta_t, method)))

    def accuracies(self, strategy: str, crop_size: int | None = None, delta_t: float | None = None,
                   method: str | None = None) -> list[float]:
        return [r["accuracy"] for r in self.rows
                if r["strategy"] == strategy and r["status"] == "ok"
                and (crop_size is None or r["crop_size"] == crop_size)
                and (delta_t is None or math.isclose(r["delta_t"], delta_t, rel_tol=1e-9))
                and (method is None or r["method"] == method)]


def run_matrix(cfg: ExperimentConfig, *, jobs: int = 1, cell_filter: str | None = None,
               force: bool = False) -> RunResult:
    out = cfg.out()
    cells = select_cells(cfg.grid(), cell_filter)
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell_job, [(cfg, c, force) for c in cells]))
    else:
        store = SessionStore(cfg)
        data = None
        rows = []
        for cell in cells:
            if data is None:
                try:
                    data = probe_data(cfg, store)
                except Exception:
                    data = None
            rows.append(run_cell(cfg, cell, store, data, force))
            log.info("%s accuracy=%s %s", cell.cell_id, rows[-1]["accuracy"], rows[-1]["status"])
    rows.sort(key=lambda r: r["cell"])
    stats = comparison_stats(rows)
    h = cfg.config_hash()
    acc_csv = write_csv(out / "results" / "accuracy.csv", ACCURACY_COLUMNS, rows, h)
    stats_csv = write_csv(out / "results" / "stats.csv", STATS_COLUMNS, stats, h)
    return RunResult(h, rows, stats, acc_csv, stats_csv)


def build_all_streams(cfg: ExperimentConfig, force: bool = False) -> list[Path]:
    """Write every stream the matrix trains on (seed 0 for random gaze) plus the probe crops."""
    store = SessionStore(cfg)
    root = cfg.out() / "streams"
    written = []
    seen = set()
    for cell in cfg.grid():
        key = (cell.strategy, cell.crop_size)
        if key in seen:
            continue
        seen.add(key)
        for m in training_streams(cfg, replace(cell, seed=cfg.seeds[0]), store, cfg.sessions):
            written.append(write_manifest(m, root / f"c{cell.crop_size}" / cell.strategy, overwrite=force))
    for s in store.for_policy(TODDLER, cfg.sessions):
        m = build_stream(s, OBJECTS_FIXATION, cfg.probe.image_size)
        written.append(write_manifest(m, root / "probe", overwrite=force))
    return written


def export_cell_embeddings(cfg: ExperimentConfig, cell: Cell, force: bool = False) -> Path:
    store = SessionStore(cfg)
    model, _ = trained_model(training_streams(cfg, cell, store), cell_ssl_config(cfg, cell), cfg.out() / "cache",
                             force)
    data = probe_data(cfg, store)
    feats = extract_features(model.encoder, data.images)
    return export_embeddings(feats, data.labels, cfg.out() / "embeddings" / f"{cell.cell_id}.csv")


# ---------------------------------------------------------------------------
# behaviour metrics and their correlation with accuracy
# ---------------------------------------------------------------------------

METRIC_NAMES = ("mean_fixation_s", "mean_look_bout_s", "mean_hold_look_s", "cumulative_look_s", "mean_saccade_s")
CORRELATION_COLUMNS = ("group", "metric", "r", "p_value", "df", "n")


def session_metrics(session: Session) -> BehaviorMetrics:
    seg = detect_saccades(GazeTrace.from_session(session))
    return compute_metrics(seg, session.target_labels(), session.intr.fps)


def detect_events_all(cfg: ExperimentConfig) -> Path:
    store = SessionStore(cfg)
    rows = []
    for s in session_configs(cfg):
        rows.append((s.session_id, session_metrics(store.get(s))))
    return write_metrics_csv(rows, cfg.out() / "results" / "behavior_metrics.csv", config_hash=cfg.config_hash())


def correlate(accuracy: Sequence[float], metrics: Sequence[BehaviorMetrics], groups: Sequence[str]) -> list[dict]:
    """Pearson r between accuracy and every metric, pooled and per group.

    Rows whose correlation is undefined (fewer than three sessions, zero
    variance, missing metric) carry empty r and p.
    """
    accuracy = np.asarray(accuracy, float)
    labels = ["pooled"] + sorted(set(groups)) if len(set(groups)) > 1 else ["pooled"]
    out = []
    for g in labels:
        members = [i for i, grp in enumerate(groups) if g == "pooled" or grp == g]
        for name in METRIC_NAMES:
            pairs = [(accuracy[i], getattr(metrics[i], name)) for i in members
                     if getattr(metrics[i], name) is not None]
            row = {"group": g, "metric": name, "r": None, "p_value": None, "df": None, "n": len(pairs)}
            if len(pairs) >= 3:
                x, y = np.array(pairs).T
                try:
                    res = pearson(y, x)
                    row.update(r=res.statistic, p_value=res.p_value, df=res.df)
                except ValueError:
                    pass
            out.append(row)
    return out


@dataclass
class BehaviorReport:
    sessions: list[str]
    groups: list[str]
    accuracy: list[float]
    metrics: list[BehaviorMetrics]
    correlations: list[dict]
    path: Path

    def correlation(self, metric: str, group: str = "pooled") -> dict:
        return next(r for r in self.correlations if r["metric"] == metric and r["group"] == group)


def behavior_stats(cfg: ExperimentConfig, *, strategy_policies: Sequence[str] = (TODDLER,), force: bool = False,
                   seed: int | None = None) -> BehaviorReport:
    """Single-session mode: one encoder per session trained on its own gaze stream, probed on the shared split."""
    store = SessionStore(cfg)
    data = probe_data(cfg, store)
    seed = cfg.seeds[0] if seed is None else seed
    crop = cfg.crop_sizes[0]
    ids, groups, accs, metrics = [], [], [], []
    train_cfgs = cfg.sessions if cfg.probe_sessions is not None else session_split(cfg)[0]
    for policy in strategy_policies:
        for s_cfg in train_cfgs:
            session = store.for_policy(policy, [s_cfg])[0]
            cell = Cell(policy, crop, cfg.methods[0], cfg.delta_ts[0], seed)
            manifests = [build_stream(session, HUMAN_GAZE, crop)]
            model, _ = trained_model(manifests, cell_ssl_config(cfg, cell), cfg.out() / "cache", force)
            ids.append(session.session_id)
            groups.append(policy)
            accs.append(probe_encoder(model, data, cfg.probe))
            metrics.append(session_metrics(session))
    corr = correlate(accs, metrics, groups)
    h = cfg.config_hash()
    per_session = [dict({"session_id": i, "group": g, "accuracy": a}, **asdict(m))
                   for i, g, a, m in zip(ids, groups, accs, metrics)]
    write_csv(cfg.out() / "results" / "behavior_sessions.csv",
              ("session_id", "group", "accuracy") + METRIC_NAMES, per_session, h)
    path = write_csv(cfg.out() / "results" / "behavior_correlations.csv", CORRELATION_COLUMNS, corr, h)
    return BehaviorReport(ids, groups, accs, metrics, corr, path)
