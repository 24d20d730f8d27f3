"""Truncated SVD with an energy-based rank rule.

The rank r is the smallest prefix of singular values whose squared sum
reaches ``energy`` times the total squared sum. A factorized (m, n)
matrix costs m*r + r + r*n floats, which is what the byte accounting
of compressed parameter exchange charges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class TruncatedSvd:
    u: np.ndarray  # (m, r)
    s: np.ndarray  # (r,)
    v: np.ndarray  # (n, r)

    @property
    def rank(self) -> int:
        return int(self.s.shape[0])

    def float_count(self) -> int:
        m = self.u.shape[0]
        n = self.v.shape[0]
        r = self.rank
        return m * r + r + r * n

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s[None, :]) @ self.v.T


def truncated_svd(matrix: np.ndarray, energy: float) -> TruncatedSvd:
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ShapeError(f"truncated_svd expects a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("truncated_svd: matrix contains non-finite values")
    if not (0.0 < energy <= 1.0):
        raise ValueError(f"truncated_svd: energy must be in (0, 1], got {energy}")
    u, s, vt = np.linalg.svd(m.astype(np.float64), full_matrices=False)
    total = float((s * s).sum())
    if total == 0.0:
        rows, cols = m.shape
        return TruncatedSvd(
            u=np.zeros((rows, 0), dtype=np.float32),
            s=np.zeros((0,), dtype=np.float32),
            v=np.zeros((cols, 0), dtype=np.float32),
        )
    cum = np.cumsum(s * s)
    # tiny slack so energy=1.0 keeps exactly the nonzero spectrum
    r = int(np.searchsorted(cum, energy * total - 1e-12 * total) + 1)
    r = min(r, len(s))
    return TruncatedSvd(
        u=u[:, :r].astype(np.float32),
        s=s[:r].astype(np.float32),
        v=vt[:r].T.astype(np.float32),
    )
