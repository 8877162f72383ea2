"""Pure numpy implementations of the block kernels.

Every routine takes a partition of coordinates encoded as ``perm`` (the
coordinates listed group after group) and ``ptr`` (offsets into ``perm``,
length ``q + 1``).  Groups are non-empty, so ``np.add.reduceat`` is safe.
"""

import numpy as np


def block_norms(x, perm, ptr):
    x = np.asarray(x, dtype=np.float64)
    if len(ptr) <= 1:
        return np.zeros(0)
    sq = np.square(x[perm])
    return np.sqrt(np.add.reduceat(sq, ptr[:-1]))


def block_soft_threshold(x, lam, perm, ptr):
    x = np.asarray(x, dtype=np.float64)
    norms = block_norms(x, perm, ptr)
    safe = np.where(norms > 0.0, norms, 1.0)
    scale = np.maximum(0.0, 1.0 - lam / safe)
    scale[norms <= lam] = 0.0
    out = np.zeros_like(x)
    out[perm] = x[perm] * np.repeat(scale, np.diff(ptr))
    return out


def project_epigraph_maxnorm(v, s, perm, ptr):
    """Euclidean projection of ``(v, s)`` onto ``{(z, t): max_g |z_g| <= t}``."""
    v = np.asarray(v, dtype=np.float64)
    norms = block_norms(v, perm, ptr)
    if norms.size == 0:
        return v.copy(), max(s, 0.0)
    if norms.max() <= s:
        return v.copy(), float(s)
    # t solves t - s = sum_g max(|v_g| - t, 0); clipping the j largest blocks
    # gives t_j = (s + sum of the j largest) / (j + 1).
    desc = np.sort(norms)[::-1]
    j = np.arange(1, desc.size + 1)
    cand = (s + np.cumsum(desc)) / (j + 1)
    nxt = np.append(desc[1:], -np.inf)
    k = int(np.argmax(cand >= nxt))
    t = cand[k]
    if t <= 0.0:
        return np.zeros_like(v), 0.0
    scale = np.minimum(1.0, t / np.where(norms > 0.0, norms, 1.0))
    out = np.zeros_like(v)
    out[perm] = v[perm] * np.repeat(scale, np.diff(ptr))
    return out, float(t)
