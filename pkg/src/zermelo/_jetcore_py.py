"""Pure numpy twin of the compiled jet kernels (same signatures)."""

import numpy as np


def _starts(out):
    # every output monomial k owns at least the pair (0, k), so runs are nonempty
    return np.flatnonzero(np.r_[True, out[1:] != out[:-1]])


def mul(a, b, left, right, out):
    """Truncated product of two equally shaped batches of jets."""
    if a.shape != b.shape:
        raise ValueError("operand shapes differ")
    m = a.shape[-1]
    a2 = a.reshape(-1, m)
    b2 = b.reshape(-1, m)
    return np.add.reduceat(a2[:, left] * b2[:, right], _starts(out), axis=1).reshape(a.shape)


def horner(coef, h, left, right, out):
    """Evaluate sum_k coef[..., k] * h**k for nilpotent h (zero constant term)."""
    m = h.shape[-1]
    deg = coef.shape[-1] - 1
    h2 = h.reshape(-1, m)
    c2 = coef.reshape(-1, deg + 1)
    starts = _starts(out)
    res = np.zeros_like(h2)
    res[:, 0] = c2[:, deg]
    for k in range(deg - 1, -1, -1):
        res = np.add.reduceat(res[:, left] * h2[:, right], starts, axis=1)
        res[:, 0] += c2[:, k]
    return res.reshape(h.shape)
