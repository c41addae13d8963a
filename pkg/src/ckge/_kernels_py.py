"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np

_CHUNK = 1 << 22


def neg_distances(q, cand, p):
    q = np.ascontiguousarray(q, dtype=np.float64)
    cand = np.ascontiguousarray(cand, dtype=np.float64)
    nq, nc = q.shape[0], cand.shape[0]
    out = np.empty((nq, nc), dtype=np.float64)
    step = max(1, _CHUNK // max(1, nc * q.shape[1]))
    for lo in range(0, nq, step):
        diff = q[lo : lo + step, None, :] - cand[None, :, :]
        if p == 1:
            out[lo : lo + step] = -np.abs(diff).sum(axis=-1)
        else:
            out[lo : lo + step] = -np.sqrt((diff * diff).sum(axis=-1))
    return out


def count_better(scores, true_idx, split, n_cand, excl_ptr, excl_idx):
    nq, width = scores.shape
    cols = np.arange(width)
    ts = scores[np.arange(nq), true_idx][:, None]
    valid = cols[None, :] < np.asarray(n_cand)[:, None]
    valid[np.arange(nq), true_idx] = False
    counts = np.diff(excl_ptr)
    qrow = np.repeat(np.arange(nq), counts)
    keep = excl_idx < np.asarray(n_cand)[qrow]
    valid[qrow[keep], excl_idx[keep]] = False
    better = (scores > ts) & valid
    is_local = cols[None, :] < np.asarray(split)[:, None]
    local = (better & is_local).sum(axis=1).astype(np.int64)
    new = (better & ~is_local).sum(axis=1).astype(np.int64)
    ties = ((scores == ts) & valid).sum(axis=1).astype(np.int64)
    masked = np.where(valid, scores, -np.inf)
    best = masked.argmax(axis=1).astype(np.int64)
    best[~valid.any(axis=1)] = -1
    return local, new, ties, best


def scatter_add_rows(rows, values, n_rows):
    rows = np.asarray(rows, dtype=np.int64)
    uniq, inv = np.unique(rows, return_inverse=True)
    sums = np.zeros((uniq.size, values.shape[1]), dtype=np.float64)
    np.add.at(sums, inv, values)
    return uniq, sums
