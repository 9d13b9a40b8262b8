"""Cross-modal retrieval metrics, AUC for anomaly scores, and an affine adapter.

    python3 demos/retrieval_and_adapter.py
"""

import numpy as np

from evclip.encoders import adapter_apply, fit_adapter
from evclip.evaluation import RetrievalSet, anomaly_score, auc, retrieval_metrics

rng = np.random.default_rng(3)

# queries are noisy copies of their key; noise grows until retrieval degrades
keys = rng.normal(size=(50, 16))
for noise in (0.1, 1.0, 3.0):
    q = keys + noise * rng.normal(size=keys.shape)
    rs = RetrievalSet(np.arange(50), q, np.arange(50) + 1000, keys, {i: {i + 1000} for i in range(50)})
    m = retrieval_metrics(rs, [1, 5, 10])
    print(f"noise {noise:3.1f}  " + "  ".join(f"{k}={v:.3f}" for k, v in m.items()))

normal, abnormal = np.eye(16)[:1], np.eye(16)[1:2]
emb = rng.normal(size=(200, 16))
labels = rng.integers(0, 2, 200)
emb[labels == 1, 1] += 1.5  # abnormal clips lean towards the abnormal prompt
emb /= np.linalg.norm(emb, axis=1, keepdims=True)
print("anomaly AUC", round(auc(anomaly_score(emb, normal, abnormal), labels), 3))

# map this model's embeddings into another 8-d space from paired rows
A = rng.normal(size=(8, 16))
ext = emb @ A.T
ada = fit_adapter(emb[:150], ext[:150])
pred = adapter_apply(ada, emb[150:])
want = ext[150:] / np.linalg.norm(ext[150:], axis=1, keepdims=True)
print("adapter cosine on unseen rows", round(float(np.mean(np.sum(pred * want, axis=1))), 6))
