"""Float64 numpy forward/backward passes for the toy vision and text towers.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
consumes the cache and an upstream gradient and returns a dict of parameter
gradients keyed exactly like the parameter dict.  Nothing here mutates its
inputs.

Vision tower: non-overlapping patches -> linear patch embedding + learned
positions -> ``depth`` pre-norm transformer blocks (multi-head self-attention
and a GELU MLP) -> final LayerNorm -> mean pool -> bias-free projection ->
L2 normalization.

Text tower: hashed token ids -> embedding lookup -> mean -> tanh dense layer
-> bias-free projection -> L2 normalization.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class VisionArch:
    image_size: int = 32
    patch: int = 8
    width: int = 32
    depth: int = 2
    heads: int = 2
    mlp_ratio: int = 2
    z: int = 64

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def tokens(self) -> int:
        return self.grid * self.grid

    def to_dict(self) -> dict:
        return {"kind": "vision", **asdict(self)}


@dataclass(frozen=True)
class TextArch:
    vocab: int = 512
    width: int = 64
    z: int = 64

    def to_dict(self) -> dict:
        return {"kind": "text", **asdict(self)}


def arch_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    return {"vision": VisionArch, "text": TextArch}[kind](**d)


# -- initialization ---------------------------------------------------------

def init_vision(arch: VisionArch, rng: np.random.Generator) -> dict[str, np.ndarray]:
    if arch.image_size % arch.patch:
        raise ValueError(f"image_size {arch.image_size} not divisible by patch {arch.patch}")
    if arch.width % arch.heads:
        raise ValueError(f"width {arch.width} not divisible by heads {arch.heads}")
    d, pp, hid = arch.width, arch.patch * arch.patch, arch.width * arch.mlp_ratio

    def dense(n_in, n_out):
        return rng.normal(0.0, n_in ** -0.5, size=(n_in, n_out))

    p = {
        "patch.W": dense(pp, d),
        "patch.b": np.zeros(d),
        "pos": rng.normal(0.0, 0.1, size=(arch.tokens, d)),
    }
    for i in range(arch.depth):
        k = f"blocks.{i}."
        p[k + "ln1.g"] = np.ones(d)
        p[k + "ln1.b"] = np.zeros(d)
        p[k + "qkv.W"] = dense(d, 3 * d)
        p[k + "qkv.b"] = np.zeros(3 * d)
        p[k + "out.W"] = dense(d, d) * 0.5
        p[k + "out.b"] = np.zeros(d)
        p[k + "ln2.g"] = np.ones(d)
        p[k + "ln2.b"] = np.zeros(d)
        p[k + "fc1.W"] = dense(d, hid)
        p[k + "fc1.b"] = np.zeros(hid)
        p[k + "fc2.W"] = dense(hid, d) * 0.5
        p[k + "fc2.b"] = np.zeros(d)
    p["ln_f.g"] = np.ones(d)
    p["ln_f.b"] = np.zeros(d)
    p["proj.W"] = dense(d, arch.z)
    return p


def init_text(arch: TextArch, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {
        "tok": rng.normal(0.0, 1.0, size=(arch.vocab, arch.width)),
        "fc.W": rng.normal(0.0, arch.width ** -0.5, size=(arch.width, arch.width)),
        "fc.b": np.zeros(arch.width),
        "proj.W": rng.normal(0.0, arch.width ** -0.5, size=(arch.width, arch.z)),
    }


# -- primitives -------------------------------------------------------------

def _layernorm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def _layernorm_back(dy, cache):
    xhat, rstd, g = cache
    red = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(red)
    db = dy.sum(red)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu(u):
    t = np.tanh(_GELU_C * (u + 0.044715 * u ** 3))
    return 0.5 * u * (1.0 + t), t


def _gelu_back(du_out, u, t):
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * u * u)
    return du_out * (0.5 * (1.0 + t) + 0.5 * u * dt)


def _softmax(s, axis=-1):
    s = s - s.max(axis=axis, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=axis, keepdims=True)


def l2_normalize(h):
    n = np.sqrt((h * h).sum(-1, keepdims=True))
    return h / n, n


def l2_normalize_back(de, e, n):
    return (de - e * (e * de).sum(-1, keepdims=True)) / n


def patchify(x: np.ndarray, patch: int) -> np.ndarray:
    b, h, w = x.shape
    gh, gw = h // patch, w // patch
    return x.reshape(b, gh, patch, gw, patch).transpose(0, 1, 3, 2, 4).reshape(b, gh * gw, patch * patch)


# -- vision tower -----------------------------------------------------------

def vision_forward(params: dict, arch: VisionArch, x: np.ndarray):
    """Encode a ``(B, H, W)`` batch into ``(B, z)`` unit vectors."""
    bsz = x.shape[0]
    tok, d, nh = arch.tokens, arch.width, arch.heads
    dh = d // nh
    patches = patchify(x, arch.patch)
    h = patches @ params["patch.W"] + params["patch.b"] + params["pos"]
    blocks = []
    for i in range(arch.depth):
        k = f"blocks.{i}."
        a, ln1 = _layernorm(h, params[k + "ln1.g"], params[k + "ln1.b"])
        qkv = a @ params[k + "qkv.W"] + params[k + "qkv.b"]
        q, kk, v = (qkv[..., j * d:(j + 1) * d].reshape(bsz, tok, nh, dh).transpose(0, 2, 1, 3) for j in range(3))
        att = _softmax(q @ kk.transpose(0, 1, 3, 2) / math.sqrt(dh))
        o = (att @ v).transpose(0, 2, 1, 3).reshape(bsz, tok, d)
        h1 = h + o @ params[k + "out.W"] + params[k + "out.b"]
        c, ln2 = _layernorm(h1, params[k + "ln2.g"], params[k + "ln2.b"])
        u = c @ params[k + "fc1.W"] + params[k + "fc1.b"]
        gu, t = _gelu(u)
        h = h1 + gu @ params[k + "fc2.W"] + params[k + "fc2.b"]
        blocks.append((a, ln1, q, kk, v, att, o, c, ln2, u, t, gu))
    y, lnf = _layernorm(h, params["ln_f.g"], params["ln_f.b"])
    pooled = y.mean(1)
    raw = pooled @ params["proj.W"]
    emb, norm = l2_normalize(raw)
    return emb, (patches, blocks, lnf, pooled, emb, norm)


def vision_backward(params: dict, arch: VisionArch, cache, d_emb: np.ndarray) -> dict[str, np.ndarray]:
    patches, blocks, lnf, pooled, emb, norm = cache
    bsz = d_emb.shape[0]
    tok, d, nh = arch.tokens, arch.width, arch.heads
    dh = d // nh
    g = {}
    d_raw = l2_normalize_back(d_emb, emb, norm)
    g["proj.W"] = pooled.T @ d_raw
    d_y = np.broadcast_to((d_raw @ params["proj.W"].T)[:, None, :] / tok, (bsz, tok, d))
    dh_, g["ln_f.g"], g["ln_f.b"] = _layernorm_back(d_y, lnf)
    for i in reversed(range(arch.depth)):
        k = f"blocks.{i}."
        a, ln1, q, kk, v, att, o, c, ln2, u, t, gu = blocks[i]
        # MLP branch
        g[k + "fc2.W"] = gu.reshape(-1, gu.shape[-1]).T @ dh_.reshape(-1, d)
        g[k + "fc2.b"] = dh_.sum((0, 1))
        du = _gelu_back(dh_ @ params[k + "fc2.W"].T, u, t)
        g[k + "fc1.W"] = c.reshape(-1, d).T @ du.reshape(-1, du.shape[-1])
        g[k + "fc1.b"] = du.sum((0, 1))
        dc = du @ params[k + "fc1.W"].T
        dx, g[k + "ln2.g"], g[k + "ln2.b"] = _layernorm_back(dc, ln2)
        dh1 = dh_ + dx
        # attention branch
        g[k + "out.W"] = o.reshape(-1, d).T @ dh1.reshape(-1, d)
        g[k + "out.b"] = dh1.sum((0, 1))
        do = (dh1 @ params[k + "out.W"].T).reshape(bsz, tok, nh, dh).transpose(0, 2, 1, 3)
        datt = do @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ do
        ds = att * (datt - (datt * att).sum(-1, keepdims=True)) / math.sqrt(dh)
        dq = ds @ kk
        dk = ds.transpose(0, 1, 3, 2) @ q
        dqkv = np.concatenate(
            [m.transpose(0, 2, 1, 3).reshape(bsz, tok, d) for m in (dq, dk, dv)], axis=-1
        )
        g[k + "qkv.W"] = a.reshape(-1, d).T @ dqkv.reshape(-1, 3 * d)
        g[k + "qkv.b"] = dqkv.sum((0, 1))
        da = dqkv @ params[k + "qkv.W"].T
        dx, g[k + "ln1.g"], g[k + "ln1.b"] = _layernorm_back(da, ln1)
        dh_ = dh1 + dx
    g["pos"] = dh_.sum(0)
    g["patch.b"] = dh_.sum((0, 1))
    g["patch.W"] = patches.reshape(-1, patches.shape[-1]).T @ dh_.reshape(-1, d)
    return {name: g[name] for name in params}


# -- text tower -------------------------------------------------------------

def text_forward(params: dict, arch: TextArch, token_ids: list[np.ndarray]):
    """Encode a list of token-id arrays into ``(B, z)`` unit vectors."""
    pooled = np.stack([params["tok"][ids].mean(0) for ids in token_ids])
    hid = np.tanh(pooled @ params["fc.W"] + params["fc.b"])
    raw = hid @ params["proj.W"]
    emb, norm = l2_normalize(raw)
    return emb, (token_ids, pooled, hid, emb, norm)


def text_backward(params: dict, arch: TextArch, cache, d_emb: np.ndarray) -> dict[str, np.ndarray]:
    token_ids, pooled, hid, emb, norm = cache
    d_raw = l2_normalize_back(d_emb, emb, norm)
    g = {"proj.W": hid.T @ d_raw}
    d_pre = (d_raw @ params["proj.W"].T) * (1.0 - hid * hid)
    g["fc.W"] = pooled.T @ d_pre
    g["fc.b"] = d_pre.sum(0)
    d_pooled = d_pre @ params["fc.W"].T
    d_tok = np.zeros_like(params["tok"])
    for ids, row in zip(token_ids, d_pooled):
        np.add.at(d_tok, ids, row / len(ids))
    g["tok"] = d_tok
    return {name: g[name] for name in params}
