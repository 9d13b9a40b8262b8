"""Synthetic paired image/event/text data and the toy teacher.

Classes are (texture, shape) combinations rendered on a dark background.
Events come from jittering a scene (small integer shifts plus brightness
changes) and thresholding consecutive frame differences, exactly the rule
used for video extraction, so both routes produce identical event frames.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .encoders import (
    DEFAULT_TEMPLATE,
    EncoderParams,
    encode_image,
    encode_prompts,
    new_image_encoder,
    new_text_encoder,
    prompts_for,
    tokenize,
)
from .errors import ConfigError, DataError, NumericalError
from .events import DEFAULT_CLAMP, EventStream, event_frame, read_evt1, write_evt1
from .video import DEFAULT_THRESHOLD, frame_diff

SHAPES = ("triangle", "square", "circle", "ring", "cross")
TEXTURES = ("solid", "striped", "checkered", "dotted")
MAX_CLASSES = len(SHAPES) * len(TEXTURES)
STEP_US = 1000


def class_names(num_classes: int) -> list[str]:
    if not 2 <= num_classes <= MAX_CLASSES:
        raise ConfigError(f"num_classes must lie in [2, {MAX_CLASSES}], got {num_classes}")
    return [f"{TEXTURES[c // len(SHAPES)]} {SHAPES[c % len(SHAPES)]}" for c in range(num_classes)]


@dataclass(frozen=True)
class Jitter:
    """Per-step motion and brightness ranges for event simulation."""

    steps: int = 6
    shift_x: int = 1
    shift_y: int = 1
    brightness: float = 0.05
    threshold: int = DEFAULT_THRESHOLD


@dataclass
class SyntheticConfig:
    num_classes: int = 10
    samples_per_class: int = 200
    image_size: int = 32
    holdout_fraction: float = 0.2
    jitter: Jitter = field(default_factory=Jitter)
    clamp: int = DEFAULT_CLAMP
    template: str = DEFAULT_TEMPLATE
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.jitter, dict):
            self.jitter = Jitter(**self.jitter)
        if self.num_classes < 2:
            raise DataError(f"need at least 2 classes, got {self.num_classes}")
        class_names(self.num_classes)
        if not 0 < self.holdout_fraction < 1:
            raise ConfigError(f"holdout_fraction must lie in (0, 1), got {self.holdout_fraction}")
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be >= 1")

    @property
    def num_heldout(self) -> int:
        return min(self.num_classes - 1, max(1, int(round(self.num_classes * self.holdout_fraction))))

    def to_dict(self) -> dict:
        return asdict(self)


# -- rendering --------------------------------------------------------------

def _sample_seed(base: int, class_id: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([base, class_id, index])


def gen_scene(class_id: int, seed: int | np.random.SeedSequence, size: int = 32,
              num_classes: int = MAX_CLASSES) -> np.ndarray:
    """Render one grayscale scene for ``class_id`` with seeded placement.

    Values are multiples of 1/255 in ``[0, 1]``.
    """
    if not 0 <= class_id < num_classes or class_id >= MAX_CLASSES:
        raise DataError(f"invalid class id {class_id}")
    rng = np.random.default_rng(seed)
    shape = SHAPES[class_id % len(SHAPES)]
    texture = TEXTURES[class_id // len(SHAPES)]

    cx, cy = size / 2 + rng.uniform(-size / 10, size / 10, 2)
    radius = size * rng.uniform(0.28, 0.36)
    angle = rng.uniform(-math.pi / 12, math.pi / 12)
    level = rng.uniform(0.7, 1.0)

    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dx, dy = xx - cx, yy - cy
    u = dx * math.cos(angle) + dy * math.sin(angle)
    v = -dx * math.sin(angle) + dy * math.cos(angle)
    rr = u * u + v * v
    if shape == "circle":
        inside = rr <= radius * radius
    elif shape == "ring":
        inside = (rr <= radius * radius) & (rr >= (0.55 * radius) ** 2)
    elif shape == "square":
        inside = (np.abs(u) <= 0.8 * radius) & (np.abs(v) <= 0.8 * radius)
    elif shape == "cross":
        arm = 0.3 * radius
        inside = ((np.abs(u) <= arm) & (np.abs(v) <= radius)) | ((np.abs(v) <= arm) & (np.abs(u) <= radius))
    else:  # triangle pointing up
        inside = (v <= 0.5 * radius) & (v >= -radius + 1.732 * np.abs(u) * 1.0)

    if texture == "solid":
        pattern = np.ones_like(u)
    elif texture == "striped":
        pattern = np.where((u // 2) % 2 == 0, 1.0, 0.3)
    elif texture == "checkered":
        pattern = np.where(((u // 3) + (v // 3)) % 2 == 0, 1.0, 0.3)
    else:
        pattern = np.where(((u % 4) - 2) ** 2 + ((v % 4) - 2) ** 2 <= 1.2, 0.3, 1.0)

    img = np.where(inside, level * pattern, 0.0)
    return np.rint(img * 255) / 255


def _shift(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = img[ys, xs]
    return out


def jitter_sequence(img: np.ndarray, jitter: Jitter, seed) -> list[np.ndarray]:
    """``jitter.steps + 1`` uint8 frames: the scene, then seeded perturbations of it."""
    rng = np.random.default_rng(seed)
    frames = [np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8)]
    for _ in range(jitter.steps):
        dx = int(rng.integers(-jitter.shift_x, jitter.shift_x + 1))
        dy = int(rng.integers(-jitter.shift_y, jitter.shift_y + 1))
        gain = 1.0 + rng.uniform(-jitter.brightness, jitter.brightness) if jitter.brightness else 1.0
        moved = _shift(np.clip(img, 0, 1) * gain, dx, dy)
        frames.append(np.rint(np.clip(moved, 0, 1) * 255).astype(np.uint8))
    return frames


def events_from_frames(frames: Sequence[np.ndarray], threshold: int = DEFAULT_THRESHOLD) -> EventStream:
    h, w = np.shape(frames[0])
    xs, ys, ts, ps = [], [], [], []
    for k in range(1, len(frames)):
        fired = frame_diff(frames[k - 1], frames[k], threshold).astype(bool)
        y, x = np.nonzero(fired)
        sign = np.sign(frames[k][y, x].astype(np.int32) - frames[k - 1][y, x].astype(np.int32))
        xs.append(x), ys.append(y), ts.append(np.full(len(x), k * STEP_US)), ps.append(sign)
    if not xs:
        return EventStream.empty(w, h)
    return EventStream(np.concatenate(xs), np.concatenate(ys), np.concatenate(ts), np.concatenate(ps), w, h)


def simulate_events(img: np.ndarray, jitter: Jitter = Jitter(), seed=0) -> EventStream:
    """Events emitted while the scene jitters; polarity is the sign of the change."""
    return events_from_frames(jitter_sequence(img, jitter, seed), jitter.threshold)


# -- datasets ---------------------------------------------------------------

@dataclass
class PairedSamples:
    """Column-oriented paired data: one row per sample."""

    images: np.ndarray
    events: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    template: str = DEFAULT_TEMPLATE
    ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def prompts(self) -> list[str]:
        return prompts_for(self.class_names, self.template)

    def sample_prompts(self) -> list[str]:
        return [self.prompts[c] for c in self.labels]

    def subset(self, idx) -> "PairedSamples":
        idx = np.asarray(idx, dtype=np.int64)
        return PairedSamples(self.images[idx], self.events[idx], self.labels[idx], list(self.class_names),
                             self.template, [self.ids[i] for i in idx] if self.ids else [])


@dataclass
class SyntheticDataset:
    train: PairedSamples
    heldout: PairedSamples
    train_classes: list[int]
    heldout_classes: list[int]
    config: SyntheticConfig
    streams: dict = field(default_factory=dict)


def split_classes(cfg: SyntheticConfig) -> tuple[list[int], list[int]]:
    rng = np.random.default_rng([cfg.seed, 0xC1A55])
    order = rng.permutation(cfg.num_classes)
    held = sorted(order[: cfg.num_heldout].tolist())
    train = sorted(order[cfg.num_heldout:].tolist())
    return train, held


def _build(cfg, class_ids, all_names, keep_streams, streams):
    images, events, labels, ids = [], [], [], []
    names = [all_names[c] for c in class_ids]
    for local, c in enumerate(class_ids):
        for i in range(cfg.samples_per_class):
            ss = _sample_seed(cfg.seed, c, i)
            scene_seed, event_seed = ss.spawn(2)
            img = gen_scene(c, scene_seed, cfg.image_size, cfg.num_classes)
            stream = simulate_events(img, cfg.jitter, event_seed)
            sid = f"c{c:02d}_{i:05d}"
            if keep_streams:
                streams[sid] = stream
            images.append(img)
            events.append(event_frame(stream, cfg.clamp))
            labels.append(local)
            ids.append(sid)
    return PairedSamples(np.array(images), np.array(events), np.array(labels, dtype=np.int64), names,
                         cfg.template, ids)


def gen_dataset(cfg: SyntheticConfig | None = None, keep_streams: bool = False) -> SyntheticDataset:
    """Class-disjoint train/heldout splits; labels index each split's own class list."""
    cfg = cfg or SyntheticConfig()
    names = class_names(cfg.num_classes)
    train_ids, held_ids = split_classes(cfg)
    streams: dict = {}
    train = _build(cfg, train_ids, names, keep_streams, streams)
    held = _build(cfg, held_ids, names, keep_streams, streams)
    return SyntheticDataset(train, held, train_ids, held_ids, cfg, streams)


def all_class_samples(cfg: SyntheticConfig) -> PairedSamples:
    """Every class of the synthetic world with its global class index, for the teacher."""
    return _build(cfg, list(range(cfg.num_classes)), class_names(cfg.num_classes), False, {})


# -- teacher ----------------------------------------------------------------

@dataclass
class TeacherConfig:
    epochs: int = 4
    lr: float = 3e-3
    temperature: float = 0.1
    min_accuracy: float = 0.9
    seed: int = 0
    vision: nn.VisionArch = field(default_factory=nn.VisionArch)
    text: nn.TextArch = field(default_factory=nn.TextArch)


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps, self.t = lr, b1, b2, eps, 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        c1, c2 = 1 - self.b1 ** self.t, 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def teacher_accuracy(image: EncoderParams, text: EncoderParams, samples: PairedSamples) -> float:
    T = encode_prompts(text, samples.prompts)
    pred = np.argmax(encode_image(image, samples.images) @ T.T, axis=1)
    return float(np.mean(pred == samples.labels))


def pretrain_teacher(samples: PairedSamples, cfg: TeacherConfig | None = None):
    """Train toy image and text towers with symmetric image-text InfoNCE.

    Each step draws one image per class, so every batch has exactly one
    positive per row and column.  Returns frozen ``(image, text)`` params and
    raises :class:`NumericalError` if training-class zero-shot accuracy stays
    below ``cfg.min_accuracy``.
    """
    cfg = cfg or TeacherConfig()
    if cfg.vision.z != cfg.text.z:
        raise ConfigError("image and text towers must share the embedding dimension")
    if cfg.vision.image_size != samples.images.shape[-1]:
        raise ConfigError("teacher image_size does not match the data")
    image = new_image_encoder(cfg.vision, seed=cfg.seed)
    text = new_text_encoder(cfg.text, seed=cfg.seed + 1)
    rng = np.random.default_rng([cfg.seed, 0x7EAC4])
    n_cls = len(samples.class_names)
    tokens = [tokenize(p, cfg.text.vocab) for p in samples.prompts]
    by_class = [np.flatnonzero(samples.labels == c) for c in range(n_cls)]
    steps_per_epoch = max(len(ix) for ix in by_class)
    opt_i, opt_t = _Adam(image.params, cfg.lr), _Adam(text.params, cfg.lr)
    targets = np.arange(n_cls)

    for _ in range(cfg.epochs):
        perms = [rng.permutation(ix) for ix in by_class]
        for s in range(steps_per_epoch):
            pick = np.array([p[s % len(p)] for p in perms])
            I, ci = nn.vision_forward(image.params, cfg.vision, samples.images[pick])
            T, ct = nn.text_forward(text.params, cfg.text, tokens)
            logits = I @ T.T / cfg.temperature
            d = np.zeros_like(logits)
            for lg, tr in ((logits, False), (logits.T, True)):
                p = np.exp(lg - lg.max(1, keepdims=True))
                p /= p.sum(1, keepdims=True)
                p[targets, targets] -= 1.0
                d += (p.T if tr else p) / (2 * n_cls)
            d /= cfg.temperature
            gi = nn.vision_backward(image.params, cfg.vision, ci, d @ T)
            gt = nn.text_backward(text.params, cfg.text, ct, d.T @ I)
            opt_i.step(image.params, gi)
            opt_t.step(text.params, gt)

    image.freeze()
    text.freeze()
    acc = teacher_accuracy(image, text, samples)
    if acc < cfg.min_accuracy:
        raise NumericalError(
            f"teacher zero-shot accuracy {acc:.3f} below {cfg.min_accuracy}; "
            "increase epochs or try another seed"
        )
    return image, text


# -- manifest ---------------------------------------------------------------

MANIFEST_COLUMNS = ("sample_id", "split", "class_id", "class_name", "prompt", "image", "events")


def write_pgm(img: np.ndarray, path) -> None:
    arr = np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8)
    h, w = arr.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + arr.tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", buf)
    if m is None:
        raise DataError(f"{path}: not a binary PGM")
    w, h, maxval = (int(v) for v in m.groups())
    data = buf[m.end():]
    if maxval != 255 or len(data) != w * h:
        raise DataError(f"{path}: unsupported PGM payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w) / 255.0


def _write_split(root: Path, split: str, samples: PairedSamples, class_ids: list[int], streams: dict) -> list[str]:
    rows = ["\t".join(MANIFEST_COLUMNS)]
    for k, sid in enumerate(samples.ids):
        img_rel, evt_rel = f"samples/{sid}.pgm", f"samples/{sid}.evt"
        write_pgm(samples.images[k], root / img_rel)
        write_evt1(streams[sid], root / evt_rel)
        local = int(samples.labels[k])
        rows.append("\t".join([sid, split, str(class_ids[local]), samples.class_names[local],
                               samples.prompts[local], img_rel, evt_rel]))
    (root / f"{split}_manifest.tsv").write_text("\n".join(rows) + "\n")
    return [f"{split}_manifest.tsv"]


def write_dataset_dir(ds: SyntheticDataset, root) -> list[str]:
    """Write images (PGM), event streams (EVT1) and one manifest per split."""
    if not ds.streams:
        raise DataError("dataset was generated without keep_streams=True")
    root = Path(root)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    out = _write_split(root, "train", ds.train, ds.train_classes, ds.streams)
    out += _write_split(root, "heldout", ds.heldout, ds.heldout_classes, ds.streams)
    return out


def read_manifest(path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split("\t")) != MANIFEST_COLUMNS:
        raise DataError(f"{path}: manifest header must be {' '.join(MANIFEST_COLUMNS)}")
    rows = []
    for n, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(MANIFEST_COLUMNS):
            raise DataError(f"{path}:{n}: expected {len(MANIFEST_COLUMNS)} columns")
        rows.append(dict(zip(MANIFEST_COLUMNS, parts)))
    return rows


def load_split(root, split: str, clamp: int | None = DEFAULT_CLAMP,
               template: str = DEFAULT_TEMPLATE) -> tuple[PairedSamples, list[int]]:
    """Read one split; labels index the split's classes in order of first appearance."""
    root = Path(root)
    path = root / f"{split}_manifest.tsv"
    if not path.exists():
        raise DataError(f"{path} not found; run gen-data first or check --data")
    rows = read_manifest(path)
    if not rows:
        raise DataError(f"{path}: no samples")
    class_ids, names = [], []
    for r in rows:
        cid = int(r["class_id"])
        if cid not in class_ids:
            class_ids.append(cid)
            names.append(r["class_name"])
    images = np.array([read_pgm(root / r["image"]) for r in rows])
    events = np.array([event_frame(read_evt1(root / r["events"]), clamp) for r in rows])
    labels = np.array([class_ids.index(int(r["class_id"])) for r in rows], dtype=np.int64)
    return PairedSamples(images, events, labels, names, template, [r["sample_id"] for r in rows]), class_ids
