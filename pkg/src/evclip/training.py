"""Event-encoder pre-training, fine-tuning, few-shot subsets and checkpoints.

Only the event encoder is ever written to.  Teacher embeddings of the paired
images and the class prompts are computed once up front: the teacher is
frozen, so they are constants for the whole run.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import checkpoint
from .encoders import EncoderParams, encode_event, encode_image, init_event_encoder
from .errors import ConfigError, DataError, DimensionError
from .evaluation import zero_shot_accuracy
from .losses import LossBreakdown, LossConfig, finetune_loss_and_grad, grad_wrt_event_encoder
from .synth import PairedSamples

log = logging.getLogger(__name__)

UPDATE_RULES = ("plain_sgd", "anchored")
REFERENCE_LR = 1e-6
REFERENCE_EPOCHS = 200


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    epochs: int = REFERENCE_EPOCHS
    batch_size: int = 32
    update_rule: str = "plain_sgd"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigError(f"momentum must lie in [0, 1], got {self.momentum}")
        if self.update_rule not in UPDATE_RULES:
            raise ConfigError(f"update_rule must be one of {UPDATE_RULES}, got {self.update_rule!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class TrainState:
    student: EncoderParams
    step: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    history: list = field(default_factory=list)
    order: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cursor: int = 0

    @classmethod
    def start(cls, image_params: EncoderParams, seed: int = 0) -> "TrainState":
        return cls(init_event_encoder(image_params), rng=np.random.default_rng(seed))

    def next_batch(self, n: int, batch_size: int) -> np.ndarray:
        """Indices of the next batch; a new seeded permutation starts each epoch."""
        if n == 0:
            raise DataError("empty training split")
        if len(self.order) != n or self.cursor >= n:
            self.order = self.rng.permutation(n)
            self.cursor = 0
        idx = self.order[self.cursor:self.cursor + batch_size]
        self.cursor += len(idx)
        return idx


# -- update rules -----------------------------------------------------------

def anchored_update(theta: np.ndarray, target: np.ndarray, grad: np.ndarray, m: float, eta: float) -> np.ndarray:
    """``m * theta + (1 - m) * (target - eta * grad)``, element-wise."""
    theta, target, grad = (np.asarray(a, dtype=np.float64) for a in (theta, target, grad))
    if not (theta.shape == target.shape == grad.shape):
        raise DimensionError(f"shape mismatch: {theta.shape}, {target.shape}, {grad.shape}")
    return m * theta + (1.0 - m) * (target - eta * grad)


def apply_update(student: EncoderParams, grads: dict, opt: OptimizerConfig,
                 target: EncoderParams | None = None) -> None:
    if student.frozen:
        raise ValueError("refusing to update a frozen encoder")
    if opt.update_rule == "plain_sgd":
        for k, g in grads.items():
            student.params[k] -= opt.learning_rate * g
        return
    if target is None:
        raise ConfigError("anchored needs the frozen image encoder as its target")
    for k, g in grads.items():
        student.params[k][...] = anchored_update(student.params[k], target.params[k], g,
                                                     opt.momentum, opt.learning_rate)


# -- steps ------------------------------------------------------------------

def pretrain_step(state: TrainState, frames: np.ndarray, img_emb: np.ndarray, txt_emb: np.ndarray,
                  labels: np.ndarray, loss_cfg: LossConfig, opt: OptimizerConfig,
                  target: EncoderParams | None = None) -> LossBreakdown:
    """One update of the event encoder on the combined objective; mutates ``state``."""
    if len(frames) == 0:
        raise DataError("empty batch")
    breakdown, grads = grad_wrt_event_encoder(state.student, frames, img_emb, txt_emb, labels, loss_cfg)
    apply_update(state.student, grads, opt, target)
    state.step += 1
    return breakdown


def finetune_step(state: TrainState, frames: np.ndarray, txt_emb: np.ndarray, labels: np.ndarray,
                  loss_cfg: LossConfig, opt: OptimizerConfig, img_emb: np.ndarray | None = None,
                  pretrain_weight: float = 0.0, target: EncoderParams | None = None) -> tuple[float, float]:
    """One supervised update on the prediction loss; returns ``(L_pred, batch accuracy)``.

    With ``pretrain_weight > 0`` (and ``img_emb`` given) the combined
    pre-training objective is added at that weight.
    """
    if len(frames) == 0:
        raise DataError("empty batch")
    loss, E, grads = finetune_loss_and_grad(state.student, frames, txt_emb, labels, loss_cfg.tau_pred)
    if pretrain_weight:
        if img_emb is None:
            raise ConfigError("mixing pre-training terms needs paired image embeddings")
        _, extra = grad_wrt_event_encoder(state.student, frames, img_emb, txt_emb, labels, loss_cfg)
        grads = {k: g + pretrain_weight * extra[k] for k, g in grads.items()}
    acc = float(np.mean(np.argmax(E @ txt_emb.T, axis=1) == labels))
    apply_update(state.student, grads, opt, target)
    state.step += 1
    return loss, acc


# -- loops ------------------------------------------------------------------

def teacher_image_embeddings(image: EncoderParams, samples: PairedSamples, chunk: int = 256) -> np.ndarray:
    return np.concatenate([encode_image(image, samples.images[i:i + chunk])
                           for i in range(0, len(samples), chunk)])


def event_embeddings(student: EncoderParams, frames: np.ndarray, chunk: int = 256) -> np.ndarray:
    return np.concatenate([encode_event(student, frames[i:i + chunk]) for i in range(0, len(frames), chunk)])


def pretrain(state: TrainState, train: PairedSamples, I_train: np.ndarray, T_train: np.ndarray,
             loss_cfg: LossConfig, opt: OptimizerConfig, steps: int,
             evaluate: Callable[[EncoderParams], float] | None = None, eval_every: int = 0,
             target: EncoderParams | None = None, on_row: Callable[[dict], None] | None = None) -> list[dict]:
    """Run ``steps`` pre-training updates, logging one row per step.

    Rows hold ``step, L, L_ct, L_zs, L_kl`` and ``heldout_acc`` (``nan`` on
    steps without an evaluation).  When ``evaluate`` is given, step 0 and
    every ``eval_every``-th step are evaluated, always including the last.
    """
    rows = []
    if evaluate is not None and state.step == 0:
        row = {"step": 0, "L": float("nan"), "L_ct": float("nan"), "L_zs": float("nan"),
               "L_kl": float("nan"), "heldout_acc": evaluate(state.student)}
        rows.append(row)
        if on_row:
            on_row(row)
    end = state.step + steps
    while state.step < end:
        idx = state.next_batch(len(train), opt.batch_size)
        b = pretrain_step(state, train.events[idx], I_train[idx], T_train, train.labels[idx], loss_cfg, opt, target)
        acc = float("nan")
        if evaluate is not None and ((eval_every and state.step % eval_every == 0) or state.step == end):
            acc = evaluate(state.student)
        row = {"step": state.step, **b.as_row(), "heldout_acc": acc}
        rows.append(row)
        if on_row:
            on_row(row)
    state.history.extend(rows)
    return rows


def finetune(state: TrainState, train: PairedSamples, T_train: np.ndarray, loss_cfg: LossConfig,
             opt: OptimizerConfig, steps: int, target: EncoderParams | None = None,
             on_row: Callable[[dict], None] | None = None) -> list[dict]:
    rows = []
    for _ in range(steps):
        idx = state.next_batch(len(train), opt.batch_size)
        loss, acc = finetune_step(state, train.events[idx], T_train, train.labels[idx], loss_cfg, opt, target=target)
        row = {"step": state.step, "L_pred": loss, "batch_acc": acc}
        rows.append(row)
        if on_row:
            on_row(row)
    state.history.extend(rows)
    return rows


def heldout_evaluator(frames: np.ndarray, T: np.ndarray, labels: np.ndarray) -> Callable[[EncoderParams], float]:
    def evaluate(theta: EncoderParams) -> float:
        return zero_shot_accuracy(event_embeddings(theta, frames), T, labels)
    return evaluate


# -- few-shot ---------------------------------------------------------------

def few_shot_subset(samples: PairedSamples, n_per_class: int, seed: int = 0) -> PairedSamples:
    """Exactly ``n_per_class`` random samples of every class, order shuffled."""
    if n_per_class < 0:
        raise ConfigError("n_per_class must be >= 0")
    rng = np.random.default_rng([seed, 0xFE75])
    picked = []
    for c, name in enumerate(samples.class_names):
        members = np.flatnonzero(samples.labels == c)
        if len(members) < n_per_class:
            raise DataError(f"class {name!r} has {len(members)} samples, fewer than {n_per_class}")
        picked.append(rng.choice(members, size=n_per_class, replace=False))
    idx = rng.permutation(np.concatenate(picked)) if picked else np.zeros(0, dtype=np.int64)
    return samples.subset(idx.astype(np.int64))


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(state: TrainState, path, extra: dict | None = None) -> None:
    meta = {
        "step": state.step,
        "rng": state.rng.bit_generator.state,
        "history": state.history,
        "order": state.order.tolist(),
        "cursor": state.cursor,
        "extra": extra or {},
    }
    checkpoint.save(path, {"event": state.student}, meta)


def load_checkpoint(path) -> TrainState:
    enc, meta = checkpoint.load(path)
    if "event" not in enc:
        raise DataError(f"{path}: no event encoder in checkpoint")
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    return TrainState(enc["event"], int(meta["step"]), rng, list(meta["history"]),
                      np.asarray(meta["order"], dtype=np.int64), int(meta["cursor"]))


def config_dict(loss_cfg: LossConfig, opt: OptimizerConfig) -> dict:
    return {"loss": asdict(loss_cfg), "optimizer": asdict(opt)}


def few_shot_eval(student: EncoderParams, heldout: PairedSamples, T: np.ndarray, shots, steps: int,
                  loss_cfg: LossConfig, opt: OptimizerConfig, seed: int = 0) -> list[dict]:
    """Top-1 on a fixed query set after fine-tuning copies of ``student`` on n-shot supports.

    Supports are nested: the n-shot set is the first n per class of one
    seeded pool of ``max(shots)`` per class, and the query set is everything
    outside that pool.  ``n = 0`` performs no update, i.e. pure zero-shot.
    """
    shots = sorted(set(int(n) for n in shots))
    pool = few_shot_subset(heldout, max(shots), seed)
    pool_ids = set(pool.ids)
    query = heldout.subset([i for i, sid in enumerate(heldout.ids) if sid not in pool_ids])
    if len(query) == 0:
        raise DataError("no heldout samples left for the query set")
    rows = []
    for n in shots:
        keep = []
        for c in range(len(heldout.class_names)):
            keep.extend(np.flatnonzero(pool.labels == c)[:n].tolist())
        support = pool.subset(sorted(keep))
        enc = EncoderParams(student.arch, {k: v.copy() for k, v in student.params.items()}, "event")
        state = TrainState(enc, rng=np.random.default_rng([seed, n]))
        if n > 0:
            finetune(state, support, T, loss_cfg, opt, steps)
        acc = zero_shot_accuracy(event_embeddings(enc, query.events), T, query.labels)
        rows.append({"n_per_class": n, "support": len(support), "query": len(query), "top1": acc})
    return rows
