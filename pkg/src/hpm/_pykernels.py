"""Vectorised numpy fallback for the compiled kernels."""
import numpy as np


def relation_indicators(hist: np.ndarray, targets: np.ndarray, csr: list) -> np.ndarray:
    """out[n, m, l, r] = 1 iff edge (hist[n, l] -> targets[n, m]) exists in relation r."""
    hist = np.asarray(hist, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    N, L = hist.shape
    M = targets.shape[1]
    out = np.zeros((N, M, L, len(csr)), dtype=np.uint8)
    for r, (indptr, indices) in enumerate(csr):
        if len(indices) == 0:
            continue
        n_nodes = len(indptr) - 1
        # encode each edge as src * n_nodes + dst; the edge list is sorted by (src, dst)
        src = np.repeat(np.arange(n_nodes, dtype=np.int64), np.diff(indptr))
        keys = src * n_nodes + indices
        valid = (hist > 0) & (hist < n_nodes)
        q = np.where(valid, hist, 0)[:, None, :] * n_nodes + targets[:, :, None]
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, len(keys) - 1)
        hit = (keys[pos] == q) & valid[:, None, :]
        out[..., r] = hit
    return out
