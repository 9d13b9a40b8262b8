"""Zero-shot classification, anomaly scoring, AUC and retrieval metrics.

Ties are always broken toward the lowest index (classes) or lowest id (keys)
so every metric is reproducible.

Embedding-set interchange (little-endian)::

    magic b"EMB1" | u32 count | u32 dim | count * (u64 id, dim float32)

Relevance files hold one ``query_id key_id`` pair per line.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoders import DEFAULT_TEMPLATE, EncoderParams, encode_prompts, prompts_for
from .errors import DataError

DEFAULT_NORMAL_PROMPTS = ("a photo of normal activity",)
DEFAULT_ABNORMAL_PROMPTS = ("a photo of abnormal activity",)


@dataclass
class PromptSet:
    class_names: list[str]
    embeddings: np.ndarray
    template: str = DEFAULT_TEMPLATE

    @classmethod
    def build(cls, text: EncoderParams, class_names: Sequence[str], template: str = DEFAULT_TEMPLATE) -> "PromptSet":
        names = list(class_names)
        if not names:
            raise DataError("prompt set needs at least one class")
        return cls(names, encode_prompts(text, prompts_for(names, template)), template)

    def __len__(self) -> int:
        return len(self.class_names)


def _softmax(s):
    e = np.exp(s - s.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def zero_shot_classify(e: np.ndarray, prompts: PromptSet | np.ndarray):
    """Predicted class index and softmax(cosine) probabilities.

    Accepts one embedding ``(z,)`` or a batch ``(B, z)``; ``np.argmax``
    returns the first maximum, which is the lowest class index.
    """
    T = prompts.embeddings if isinstance(prompts, PromptSet) else np.asarray(prompts)
    if T.size == 0 or len(T) == 0:
        raise DataError("empty prompt set")
    sims = np.asarray(e, dtype=np.float64) @ T.T
    return np.argmax(sims, axis=-1), _softmax(sims)


def top1_accuracy(predictions, labels) -> float:
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if predictions.shape != labels.shape:
        raise DataError(f"{predictions.shape[0] if predictions.ndim else 0} predictions "
                        f"for {labels.shape[0] if labels.ndim else 0} labels")
    if predictions.size == 0:
        raise DataError("no predictions")
    return float(np.mean(predictions == labels))


def zero_shot_accuracy(emb: np.ndarray, prompts: PromptSet | np.ndarray, labels) -> float:
    pred, _ = zero_shot_classify(emb, prompts)
    return top1_accuracy(pred, labels)


# -- anomaly detection ------------------------------------------------------

def anomaly_score(e: np.ndarray, normal: np.ndarray, abnormal: np.ndarray) -> np.ndarray | float:
    """Softmax weight of the abnormal group over (best normal, best abnormal) similarity."""
    normal, abnormal = np.atleast_2d(normal), np.atleast_2d(abnormal)
    if normal.size == 0 or abnormal.size == 0:
        raise DataError("both prompt groups must be nonempty")
    e = np.asarray(e, dtype=np.float64)
    s_norm = (e @ normal.T).max(-1)
    s_abn = (e @ abnormal.T).max(-1)
    score = 1.0 / (1.0 + np.exp(s_norm - s_abn))
    return float(score) if np.ndim(score) == 0 else score


def auc(scores, labels) -> float:
    """ROC AUC as the Mann-Whitney statistic with ties counted one half."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DataError("scores and labels differ in length")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC is undefined without both positive and negative labels")
    # average ranks handle ties exactly
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# -- retrieval --------------------------------------------------------------

@dataclass
class RetrievalSet:
    query_ids: np.ndarray
    queries: np.ndarray
    key_ids: np.ndarray
    keys: np.ndarray
    relevance: dict

    def __post_init__(self):
        self.query_ids = np.asarray(self.query_ids, dtype=np.int64)
        self.key_ids = np.asarray(self.key_ids, dtype=np.int64)
        self.queries = np.atleast_2d(np.asarray(self.queries, dtype=np.float64))
        self.keys = np.atleast_2d(np.asarray(self.keys, dtype=np.float64))
        if len(self.query_ids) != len(self.queries) or len(self.key_ids) != len(self.keys):
            raise DataError("ids and embeddings differ in count")
        for q in self.query_ids.tolist():
            if not self.relevance.get(q):
                raise DataError(f"query {q} has no relevant keys")


def rank_keys(rs: RetrievalSet) -> np.ndarray:
    """Key indices per query, by descending cosine similarity then ascending key id."""
    qn = rs.queries / np.linalg.norm(rs.queries, axis=1, keepdims=True)
    kn = rs.keys / np.linalg.norm(rs.keys, axis=1, keepdims=True)
    sims = qn @ kn.T
    # lexsort: last key is primary
    return np.stack([np.lexsort((rs.key_ids, -row)) for row in sims])


def retrieval_metrics(rs: RetrievalSet, ks: Iterable[int] = (1, 5, 10)) -> dict[str, float]:
    """Recall@k, mAP@k and MRR over all queries.

    AP@k sums precision at each relevant hit within the top k and divides by
    ``min(|relevant|, k)``.
    """
    ks = sorted(set(int(k) for k in ks))
    ranking = rs.key_ids[rank_keys(rs)]
    recall = {k: [] for k in ks}
    ap = {k: [] for k in ks}
    rr = []
    for qid, ranked in zip(rs.query_ids.tolist(), ranking):
        rel = set(rs.relevance[qid])
        hits = np.fromiter((kid in rel for kid in ranked.tolist()), dtype=bool, count=len(ranked))
        first = np.flatnonzero(hits)
        rr.append(1.0 / (first[0] + 1) if first.size else 0.0)
        cum = np.cumsum(hits)
        prec = cum / np.arange(1, len(hits) + 1)
        for k in ks:
            top = hits[:k]
            recall[k].append(float(top.any()))
            ap[k].append(float(prec[:k][top].sum() / min(len(rel), k)))
    out = {}
    for k in ks:
        out[f"R@{k}"] = float(np.mean(recall[k]))
    for k in ks:
        out[f"mAP@{k}"] = float(np.mean(ap[k]))
    out["MRR"] = float(np.mean(rr))
    return out


# -- interchange ------------------------------------------------------------

_EMB_HEAD = np.dtype([("magic", "S4"), ("count", "<u4"), ("dim", "<u4")])


def write_embeddings(path, ids, emb) -> None:
    emb = np.atleast_2d(np.asarray(emb))
    ids = np.asarray(ids, dtype=np.int64)
    head = np.array([(b"EMB1", len(ids), emb.shape[1])], dtype=_EMB_HEAD)
    rec = np.zeros(len(ids), dtype=[("id", "<u8"), ("v", "<f4", (emb.shape[1],))])
    rec["id"], rec["v"] = ids, emb
    Path(path).write_bytes(head.tobytes() + rec.tobytes())


def read_embeddings(path) -> tuple[np.ndarray, np.ndarray]:
    buf = Path(path).read_bytes()
    if len(buf) < _EMB_HEAD.itemsize:
        raise DataError(f"{path}: truncated embedding file")
    head = np.frombuffer(buf, dtype=_EMB_HEAD, count=1)[0]
    if head["magic"] != b"EMB1":
        raise DataError(f"{path}: not an EMB1 embedding set")
    n, dim = int(head["count"]), int(head["dim"])
    rec_t = np.dtype([("id", "<u8"), ("v", "<f4", (dim,))])
    if len(buf) - _EMB_HEAD.itemsize != n * rec_t.itemsize:
        raise DataError(f"{path}: size does not match {n} records of dim {dim}")
    rec = np.frombuffer(buf, dtype=rec_t, offset=_EMB_HEAD.itemsize)
    return rec["id"].astype(np.int64), rec["v"].astype(np.float64)


def write_relevance(path, relevance: dict) -> None:
    lines = [f"{q} {k}" for q in sorted(relevance) for k in sorted(relevance[q])]
    Path(path).write_text("\n".join(lines) + "\n")


def read_relevance(path) -> dict[int, set[int]]:
    rel: dict[int, set[int]] = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"{path}:{n}: expected 'query_id key_id'")
        rel.setdefault(int(parts[0]), set()).add(int(parts[1]))
    return rel


def format_table(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    """Tab-separated table with a header row; floats printed with 6 decimals."""
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())
    out = ["\t".join(columns)]
    for row in rows:
        out.append("\t".join(f"{row[c]:.6f}" if isinstance(row[c], float) else str(row[c]) for c in columns))
    return "\n".join(out) + "\n"
