"""Image, text and event encoders sharing one embedding space, plus the adapter.

The image and text towers are the frozen teacher.  The event tower is a deep
copy of the image tower and is the only trainable encoder.  Frozen parameter
arrays are made read-only, so an accidental in-place update raises instead of
silently corrupting the teacher.
"""

from __future__ import annotations

import copy
import hashlib
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .errors import DataError, DimensionError

ROLES = ("image", "text", "event")
DEFAULT_TEMPLATE = "a photo of {class}"


@dataclass
class EncoderParams:
    arch: nn.VisionArch | nn.TextArch
    params: dict[str, np.ndarray]
    role: str
    frozen: bool = False

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.role == "text" and not isinstance(self.arch, nn.TextArch):
            raise ValueError("text role needs a TextArch")
        if self.role != "text" and not isinstance(self.arch, nn.VisionArch):
            raise ValueError(f"{self.role} role needs a VisionArch")
        if self.frozen:
            self.freeze()

    def freeze(self) -> "EncoderParams":
        self.frozen = True
        for arr in self.params.values():
            arr.setflags(write=False)
        return self

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()

    @property
    def z(self) -> int:
        return self.arch.z

    def num_params(self) -> int:
        return sum(a.size for a in self.params.values())


def new_image_encoder(arch: nn.VisionArch | None = None, seed: int = 0) -> EncoderParams:
    arch = arch or nn.VisionArch()
    return EncoderParams(arch, nn.init_vision(arch, np.random.default_rng(seed)), "image")


def new_text_encoder(arch: nn.TextArch | None = None, seed: int = 0) -> EncoderParams:
    arch = arch or nn.TextArch()
    return EncoderParams(arch, nn.init_text(arch, np.random.default_rng(seed)), "text")


def init_event_encoder(image_params: EncoderParams) -> EncoderParams:
    """Trainable event encoder starting as an exact copy of the image encoder."""
    if image_params.role != "image":
        raise ValueError(f"expected image-role params, got {image_params.role!r}")
    params = {k: np.array(v, dtype=np.float64, copy=True) for k, v in image_params.params.items()}
    return EncoderParams(copy.deepcopy(image_params.arch), params, "event", frozen=False)


# -- encoding ---------------------------------------------------------------

def _as_batch(p: EncoderParams, x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    size = p.arch.image_size
    if x.ndim != 3 or x.shape[1:] != (size, size):
        raise DimensionError(f"expected ({size}, {size}) input(s), got shape {x.shape[-2:] if x.ndim >= 2 else x.shape}")
    return x, single


def _encode_vision(p: EncoderParams, x, role: str) -> np.ndarray:
    if p.role != role:
        raise ValueError(f"expected {role}-role params, got {p.role!r}")
    x, single = _as_batch(p, x)
    emb, _ = nn.vision_forward(p.params, p.arch, x)
    return emb[0] if single else emb


def encode_image(p: EncoderParams, img) -> np.ndarray:
    """Embed one ``(H, W)`` grayscale image, or a ``(B, H, W)`` batch."""
    return _encode_vision(p, img, "image")


def encode_event(p: EncoderParams, frame) -> np.ndarray:
    """Embed one ``(H, W)`` event frame, or a ``(B, H, W)`` batch."""
    return _encode_vision(p, frame, "event")


def tokenize(text: str, vocab: int) -> np.ndarray:
    """Lowercase whitespace tokens hashed (CRC32) into ``[0, vocab)``."""
    words = text.lower().split()
    return np.array([zlib.crc32(w.encode("utf-8")) % vocab for w in words], dtype=np.int64)


def _token_batch(p: EncoderParams, tokens) -> tuple[list[np.ndarray], bool]:
    if p.role != "text":
        raise ValueError(f"expected text-role params, got {p.role!r}")
    single = len(tokens) == 0 or np.isscalar(tokens[0])
    seqs = [tokens] if single else list(tokens)
    out = []
    for seq in seqs:
        ids = np.asarray(seq, dtype=np.int64)
        if ids.size == 0:
            raise DataError("empty token sequence")
        if ids.min() < 0 or ids.max() >= p.arch.vocab:
            raise DataError(f"token id outside vocabulary [0, {p.arch.vocab})")
        out.append(ids)
    return out, single


def encode_text(p: EncoderParams, tokens) -> np.ndarray:
    """Embed one token-id sequence, or a list of them."""
    seqs, single = _token_batch(p, tokens)
    emb, _ = nn.text_forward(p.params, p.arch, seqs)
    return emb[0] if single else emb


def encode_prompts(p: EncoderParams, texts: Sequence[str]) -> np.ndarray:
    return encode_text(p, [tokenize(t, p.arch.vocab) for t in texts])


def prompts_for(class_names: Sequence[str], template: str = DEFAULT_TEMPLATE) -> list[str]:
    return [template.replace("{class}", name) for name in class_names]


# -- adapter ----------------------------------------------------------------

@dataclass
class AdapterParams:
    """Single affine map from this model's space into an external one."""

    weight: np.ndarray
    bias: np.ndarray = field(default=None)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise DimensionError("adapter weight must be a matrix")
        self.bias = np.zeros(self.weight.shape[0]) if self.bias is None else np.asarray(self.bias, dtype=np.float64)
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"bias shape {self.bias.shape} does not match weight rows {self.weight.shape[0]}")


def adapter_apply(a: AdapterParams, e: np.ndarray) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.shape[-1] != a.weight.shape[1]:
        raise DimensionError(f"embedding dim {e.shape[-1]} != adapter input dim {a.weight.shape[1]}")
    out, _ = nn.l2_normalize(e @ a.weight.T + a.bias)
    return out


def fit_adapter(src: np.ndarray, dst: np.ndarray, ridge: float = 1e-6) -> AdapterParams:
    """Least-squares affine fit mapping paired ``src`` rows onto ``dst`` rows."""
    src, dst = np.asarray(src, dtype=np.float64), np.asarray(dst, dtype=np.float64)
    if len(src) != len(dst):
        raise DimensionError("adapter fit needs paired rows")
    x = np.hstack([src, np.ones((len(src), 1))])
    sol = np.linalg.solve(x.T @ x + ridge * np.eye(x.shape[1]), x.T @ dst)
    return AdapterParams(sol[:-1].T, sol[-1])
