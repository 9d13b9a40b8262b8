"""Independent brute-force reference implementations used by the tests.

Nothing here imports the library's metric or loss code; each function is the
definition written out as plainly as possible.
"""

import math

import numpy as np


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# -- event frames -----------------------------------------------------------

def count_grid_loop(xs, ys, width, height):
    grid = [[0] * width for _ in range(height)]
    for x, y in zip(xs, ys):
        grid[y][x] += 1
    return np.array(grid, dtype=np.int64)


def majority_by_count(labels):
    ones = sum(1 for v in labels if v == 1)
    zeros = len(labels) - ones
    return 1 if ones >= zeros else 0


# -- losses -----------------------------------------------------------------

def info_nce_loop(E, I, tau):
    n = len(E)
    total = 0.0
    for i in range(n):
        num = math.exp(float(E[i] @ I[i]) / tau)
        den = sum(math.exp(float(E[i] @ I[j]) / tau) for j in range(n))
        total -= math.log(num / den)
    return total / n


def ce_loop(X, T, labels, tau):
    total = 0.0
    for i, c in enumerate(labels):
        den = sum(math.exp(float(X[i] @ t) / tau) for t in T)
        total -= math.log(math.exp(float(X[i] @ T[c]) / tau) / den)
    return total / len(X)


def kl_components_loop(E, I):
    total = 0.0
    for e, i in zip(E, I):
        p = np.exp(e) / np.exp(e).sum()
        q = np.exp(i) / np.exp(i).sum()
        total += sum(pk * math.log(pk / qk) for pk, qk in zip(p, q))
    return total / len(E)


# -- metrics ----------------------------------------------------------------

def auc_pairs(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def ranking_by_pairs(q, keys, key_ids):
    """Position of each key by counting how many keys beat it."""
    qn = q / np.linalg.norm(q)
    sims = [float(qn @ (k / np.linalg.norm(k))) for k in keys]
    n = len(keys)
    pos = []
    for i in range(n):
        beats = sum(1 for j in range(n) if sims[j] > sims[i] or (sims[j] == sims[i] and key_ids[j] < key_ids[i]))
        pos.append(beats)
    order = [None] * n
    for i, p in enumerate(pos):
        order[p] = key_ids[i]
    return order


def retrieval_loop(query_ids, queries, key_ids, keys, relevance, ks):
    rec = {k: 0.0 for k in ks}
    ap = {k: 0.0 for k in ks}
    rr = 0.0
    for qid, q in zip(query_ids, queries):
        ranked = ranking_by_pairs(q, keys, list(key_ids))
        rel = relevance[qid]
        for r, kid in enumerate(ranked):
            if kid in rel:
                rr += 1.0 / (r + 1)
                break
        for k in ks:
            top = ranked[:k]
            rec[k] += 1.0 if any(kid in rel for kid in top) else 0.0
            hits, s = 0, 0.0
            for r, kid in enumerate(top):
                if kid in rel:
                    hits += 1
                    s += hits / (r + 1)
            ap[k] += s / min(len(rel), k)
    nq = len(query_ids)
    out = {f"R@{k}": rec[k] / nq for k in ks}
    out.update({f"mAP@{k}": ap[k] / nq for k in ks})
    out["MRR"] = rr / nq
    return out


# -- finite differences -----------------------------------------------------

def central_difference(f, params, name, index, h=1e-5):
    arr = params[name]
    old = arr[index]
    arr[index] = old + h
    up = f()
    arr[index] = old - h
    down = f()
    arr[index] = old
    return (up - down) / (2 * h)
