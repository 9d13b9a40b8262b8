"""Alignment objectives and their analytic gradients.

All reductions are arithmetic means over the batch.  Each ``*_grad`` helper
returns ``(value, d_value/d_event_embeddings)``; the image and text embeddings
come from frozen encoders and receive no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .encoders import EncoderParams
from .errors import ConfigError, DataError, NumericalError

KL_MODES = ("components", "similarity")
ZS_CLASS_MODES = ("all", "batch")


@dataclass
class LossConfig:
    tau_ct: float = 1.0
    tau_zs: float = 2.0
    alpha: float = 0.1
    use_ct: bool = True
    use_kl: bool = True
    kl_mode: str = "components"
    zs_classes: str = "all"
    tau_pred: float = 1.0

    def __post_init__(self):
        for name in ("tau_ct", "tau_zs", "tau_pred"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.kl_mode not in KL_MODES:
            raise ConfigError(f"kl_mode must be one of {KL_MODES}")
        if self.zs_classes not in ZS_CLASS_MODES:
            raise ConfigError(f"zs_classes must be one of {ZS_CLASS_MODES}")


@dataclass
class BatchEmbeddings:
    E_prime: np.ndarray
    img_emb: np.ndarray
    txt_emb: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.E_prime = np.atleast_2d(np.asarray(self.E_prime, dtype=np.float64))
        self.img_emb = np.atleast_2d(np.asarray(self.img_emb, dtype=np.float64))
        self.txt_emb = np.atleast_2d(np.asarray(self.txt_emb, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if self.E_prime.shape != self.img_emb.shape or len(self.labels) != len(self.E_prime):
            raise DataError("event, image and label batches must pair up index by index")


@dataclass
class LossBreakdown:
    total: float
    ct: float
    zs: float
    kl: float
    zs_event: float = 0.0
    zs_image: float = 0.0
    extra: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        return {"L": self.total, "L_ct": self.ct, "L_zs": self.zs, "L_kl": self.kl}


def _logsumexp(s: np.ndarray) -> np.ndarray:
    m = s.max(-1, keepdims=True)
    return (m + np.log(np.exp(s - m).sum(-1, keepdims=True)))[..., 0]


def _check_tau(tau):
    if not tau > 0:
        raise ConfigError(f"temperature must be > 0, got {tau}")


def _cross_entropy_grad(logits: np.ndarray, targets: np.ndarray):
    """Mean CE of integer targets under row-softmax logits, with d/d logits."""
    lse = _logsumexp(logits)
    n = len(logits)
    loss = float(np.mean(lse - logits[np.arange(n), targets]))
    d = np.exp(logits - lse[:, None])
    d[np.arange(n), targets] -= 1.0
    return loss, d / n


# -- contrastive ------------------------------------------------------------

def info_nce_grad(E: np.ndarray, I: np.ndarray, tau: float = 1.0):
    E, I = np.atleast_2d(E), np.atleast_2d(I)
    if len(E) == 0:
        raise DataError("info_nce needs at least one pair")
    _check_tau(tau)
    loss, d_logits = _cross_entropy_grad(E @ I.T / tau, np.arange(len(E)))
    return loss, d_logits @ I / tau


def info_nce(E: np.ndarray, I: np.ndarray, tau: float = 1.0) -> float:
    """InfoNCE with event rows as queries and image rows as keys."""
    return info_nce_grad(E, I, tau)[0]


# -- zero-shot preservation -------------------------------------------------

def _check_labels(labels, m):
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if m < 1:
        raise DataError("need at least one class text embedding")
    if labels.size and (labels.min() < 0 or labels.max() >= m):
        raise DataError(f"labels must lie in [0, {m})")
    return labels


def zs_terms_grad(E, I, T, labels, tau: float = 2.0):
    """Event-vs-text and image-vs-text cross entropies, plus d(event term)/dE."""
    E, I, T = np.atleast_2d(E), np.atleast_2d(I), np.atleast_2d(T)
    _check_tau(tau)
    labels = _check_labels(labels, len(T))
    if len(E) == 0:
        raise DataError("zs_loss needs a nonempty batch")
    ev, d_logits = _cross_entropy_grad(E @ T.T / tau, labels)
    im, _ = _cross_entropy_grad(I @ T.T / tau, labels)
    return ev, im, d_logits @ T / tau


def zs_loss(E, I, T, labels, tau: float = 2.0) -> float:
    ev, im, _ = zs_terms_grad(E, I, T, labels, tau)
    return ev + im


def _restrict_to_batch_classes(T, labels):
    present, remapped = np.unique(labels, return_inverse=True)
    return T[present], remapped


# -- distribution alignment -------------------------------------------------

def kl_divergence(P: np.ndarray, Q: np.ndarray) -> float:
    """Mean over rows of ``KL(P_i || Q_i)`` for strictly positive distributions."""
    P, Q = np.atleast_2d(P).astype(np.float64), np.atleast_2d(Q).astype(np.float64)
    if not (np.isfinite(P).all() and np.isfinite(Q).all()):
        raise DataError("KL inputs must be finite")
    if (P <= 0).any() or (Q <= 0).any():
        raise DataError("KL inputs must be strictly positive")
    return float(np.mean(np.sum(P * (np.log(P) - np.log(Q)), axis=-1)))


def _log_softmax(s):
    return s - _logsumexp(s)[..., None]


def kl_align_grad(E, I, mode: str = "components"):
    E, I = np.atleast_2d(E), np.atleast_2d(I)
    if not (np.isfinite(E).all() and np.isfinite(I).all()):
        raise DataError("kl_align inputs must be finite")
    if mode == "components":
        le, li = _log_softmax(E), _log_softmax(I)
    elif mode == "similarity":
        le, li = _log_softmax(E @ I.T), _log_softmax(I @ I.T)
    else:
        raise ConfigError(f"kl_mode must be one of {KL_MODES}")
    p = np.exp(le)
    g = le - li
    n = len(E)
    loss = float(np.mean(np.sum(p * g, axis=-1)))
    d_logits = p * (g - np.sum(p * g, axis=-1, keepdims=True)) / n
    d_E = d_logits if mode == "components" else d_logits @ I
    return loss, d_E


def kl_align(E, I, mode: str = "components") -> float:
    """KL of the event distribution from the image distribution, per sample.

    ``components`` softmaxes each embedding over its own coordinates;
    ``similarity`` softmaxes each row of the similarity matrix against the
    image keys.
    """
    return kl_align_grad(E, I, mode)[0]


# -- combined ---------------------------------------------------------------

def combined_loss_grad(batch: BatchEmbeddings, cfg: LossConfig):
    E, I, T, labels = batch.E_prime, batch.img_emb, batch.txt_emb, batch.labels
    if cfg.zs_classes == "batch":
        T, labels = _restrict_to_batch_classes(T, _check_labels(labels, len(T)))
    ct, d_ct = info_nce_grad(E, I, cfg.tau_ct)
    zs_e, zs_i, d_zs = zs_terms_grad(E, I, T, labels, cfg.tau_zs)
    kl, d_kl = kl_align_grad(E, I, cfg.kl_mode)
    w_ct, w_kl = float(cfg.use_ct), float(cfg.use_kl)
    total = w_ct * ct + cfg.alpha * (zs_e + zs_i) + w_kl * kl
    parts = {"L_ct": ct, "L_zs": zs_e + zs_i, "L_kl": kl}
    bad = [k for k, v in parts.items() if not np.isfinite(v)]
    if bad or not np.isfinite(total):
        raise NumericalError(f"non-finite loss term(s) {bad or ['L']}: {parts}")
    d_E = w_ct * d_ct + cfg.alpha * d_zs + w_kl * d_kl
    return LossBreakdown(total, ct, zs_e + zs_i, kl, zs_e, zs_i), d_E


def combined_loss(batch: BatchEmbeddings, cfg: LossConfig | None = None) -> LossBreakdown:
    """``L_ct + alpha * L_zs + L_kl`` with every term reported separately.

    Disabled terms (``use_ct``/``use_kl`` false, ``alpha = 0``) are still
    computed and reported, they just carry zero weight in ``total``.
    """
    return combined_loss_grad(batch, cfg or LossConfig())[0]


# -- supervised fine-tuning -------------------------------------------------

def _one_hot(y, n_classes):
    y = np.asarray(y)
    if y.ndim == 1:
        out = np.zeros((len(y), n_classes))
        out[np.arange(len(y)), y.astype(np.int64)] = 1.0
        return out
    return y.astype(np.float64)


def pred_loss(pred: np.ndarray, y: np.ndarray, from_logits: bool = False) -> float:
    """Cross entropy ``-(1/N) sum_i sum_c y_ic log y'_ic``.

    ``pred`` holds probability rows, or logits when ``from_logits`` is set.
    ``y`` is one-hot ``(N, C)`` or integer labels ``(N,)``.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    y = _one_hot(y, pred.shape[1])
    if y.shape != pred.shape:
        raise DataError(f"label shape {y.shape} != prediction shape {pred.shape}")
    if from_logits:
        logp = _log_softmax(pred)
    else:
        if (pred < 0).any() or not np.allclose(pred.sum(1), 1.0, atol=1e-6):
            raise DataError("prediction rows must be probability distributions")
        with np.errstate(divide="ignore"):
            logp = np.log(pred)
    mask = y > 0
    return float(-np.sum(y[mask] * logp[mask]) / len(pred))


def pred_loss_grad(E: np.ndarray, T: np.ndarray, labels, tau: float = 1.0):
    """Fine-tuning loss on softmax(cosine / tau) against class texts, with d/dE."""
    _check_tau(tau)
    labels = _check_labels(labels, len(T))
    loss, d_logits = _cross_entropy_grad(E @ T.T / tau, labels)
    return loss, d_logits @ T / tau


# -- encoder gradient -------------------------------------------------------

def grad_wrt_event_encoder(student: EncoderParams, frames: np.ndarray, img_emb, txt_emb, labels,
                           cfg: LossConfig | None = None):
    """Combined loss and its gradient for every event-encoder array.

    ``frames`` are encoded live through ``student``; image and text embeddings
    are constants, so the teacher receives no gradient by construction.
    """
    cfg = cfg or LossConfig()
    if student.role != "event" or student.frozen:
        raise ValueError("gradients are only taken for the trainable event encoder")
    E, cache = nn.vision_forward(student.params, student.arch, np.asarray(frames, dtype=np.float64))
    breakdown, d_E = combined_loss_grad(BatchEmbeddings(E, img_emb, txt_emb, labels), cfg)
    grads = nn.vision_backward(student.params, student.arch, cache, d_E)
    missing = set(student.params) - set(grads)
    if missing:
        raise RuntimeError(f"gradient path missing for {sorted(missing)}")
    return breakdown, grads


def finetune_loss_and_grad(student: EncoderParams, frames, txt_emb, labels, tau: float = 1.0):
    E, cache = nn.vision_forward(student.params, student.arch, np.asarray(frames, dtype=np.float64))
    loss, d_E = pred_loss_grad(E, txt_emb, labels, tau)
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite L_pred: {loss}")
    return loss, E, nn.vision_backward(student.params, student.arch, cache, d_E)
