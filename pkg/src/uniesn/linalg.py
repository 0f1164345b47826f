"""Operator norms via power iteration.

The Euclidean vector norm and the spectral matrix norm it induces are used
everywhere in this package; every Lipschitz constant and error gain is built
from them.
"""

import numpy as np

_POWER_TOL = 1e-12
_POWER_MAX_ITER = 10_000


def operator_norm(mat, tol: float = _POWER_TOL, max_iter: int = _POWER_MAX_ITER) -> float:
    """Largest singular value of ``mat``, estimated by power iteration on A^T A.

    Deterministic: the starting vector comes from a fixed-seed generator, so
    repeated calls on the same matrix return bitwise-identical values.
    """
    a = np.asarray(mat, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {a.shape}")
    if a.size == 0 or not a.any():
        return 0.0
    n = a.shape[1]
    if n == 1:
        # A^T A is scalar; the norm is the column's Euclidean norm.
        return float(np.linalg.norm(a[:, 0]))

    rng = np.random.default_rng(0)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    prev = 0.0
    for _ in range(max_iter):
        w = a.T @ (a @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            # v happened to lie in the kernel; restart from a fresh direction.
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            continue
        v = w / lam
        if abs(lam - prev) <= tol * lam:
            break
        prev = lam
    return float(np.sqrt(lam))
