"""Rigid-body superposition, RMSD, and an admissible RMSD lower bound."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, ShapeError


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class AlignmentResult:
    transform: RigidTransform
    rmsd: float


def _as_points(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ShapeError(f"expected an (n, 3) coordinate array, got shape {a.shape}")
    return a


def kabsch(p, q) -> AlignmentResult:
    """Optimal proper rigid transform T minimizing sum ||T(p_i) - q_i||^2.

    Uses the SVD of the centered cross-covariance with a determinant sign
    correction, so reflections are never returned. Collinear or planar
    inputs still yield a valid minimizer.
    """
    p = _as_points(p)
    q = _as_points(q)
    if p.shape != q.shape:
        raise ShapeError(f"point sets differ in shape: {p.shape} vs {q.shape}")
    n = len(p)
    if n < 3:
        raise DomainError(f"superposition needs at least 3 points, got {n}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise DomainError("non-finite coordinates")

    pc = p.mean(axis=0)
    qc = q.mean(axis=0)
    h = (p - pc).T @ (q - qc)
    u, _, vt = np.linalg.svd(h)
    d = 1.0 if np.linalg.det(vt.T @ u.T) >= 0 else -1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    trans = qc - rot @ pc
    diff = (p - pc) @ rot.T - (q - qc)
    rmsd = float(np.sqrt(np.einsum("ij,ij->", diff, diff) / n))
    return AlignmentResult(RigidTransform(rot, trans), rmsd)


def batch_rmsd(windows: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Kabsch RMSD of every window in a (W, n, 3) stack against one (n, 3) query."""
    windows = np.asarray(windows, dtype=np.float64)
    query = _as_points(query)
    if windows.ndim != 3 or windows.shape[1:] != query.shape:
        raise ShapeError(f"window stack {windows.shape} does not match query {query.shape}")
    if len(windows) == 0:
        return np.zeros(0)
    n = query.shape[0]
    qc = query - query.mean(axis=0)
    wc = windows - windows.mean(axis=1, keepdims=True)
    h = np.einsum("wni,nj->wij", wc, qc)
    u, _, vt = np.linalg.svd(h)
    v = np.swapaxes(vt, 1, 2)
    d = np.where(np.linalg.det(v @ np.swapaxes(u, 1, 2)) >= 0, 1.0, -1.0)
    v[:, :, 2] *= d[:, None]
    rot = v @ np.swapaxes(u, 1, 2)
    diff = np.einsum("wij,wnj->wni", rot, wc) - qc
    return np.sqrt(np.einsum("wni,wni->w", diff, diff) / n)


def probe_pairs(n: int) -> tuple[tuple[int, int], ...]:
    """Index pairs (first, last), (first, middle), (middle, last) for an n-point set."""
    mid = n // 2
    pairs = {(0, n - 1), (0, mid), (mid, n - 1)}
    return tuple(sorted((i, j) for i, j in pairs if i != j))


def rmsd_bound(p, q, n_total: int | None = None, pairs: Sequence[tuple[int, int]] | None = None) -> float:
    """Lower bound on the Kabsch RMSD from a few intra-set distance differences.

    Under the optimal superposition with residuals e_i,
    |d_p(i,j) - d_q(i,j)| <= |e_i| + |e_j| <= sqrt(2 N) * rmsd,
    so max |d_p - d_q| / sqrt(2 N) never exceeds the RMSD. ``n_total`` lets
    a segment of a larger joint superposition use the joint point count N.
    """
    p = _as_points(p)
    q = _as_points(q)
    if p.shape != q.shape:
        raise ShapeError(f"point sets differ in shape: {p.shape} vs {q.shape}")
    n = len(p)
    if pairs is None:
        pairs = probe_pairs(n)
    if not pairs:
        return 0.0
    i, j = np.array(pairs).T
    dp = np.linalg.norm(p[i] - p[j], axis=1)
    dq = np.linalg.norm(q[i] - q[j], axis=1)
    return float(np.max(np.abs(dp - dq)) / np.sqrt(2.0 * (n_total or n)))


def batch_rmsd_bound(windows: np.ndarray, query: np.ndarray, n_total: int | None = None) -> np.ndarray:
    """Vectorized ``rmsd_bound`` for a (W, n, 3) window stack."""
    windows = np.asarray(windows, dtype=np.float64)
    n = query.shape[0]
    pairs = probe_pairs(n)
    if len(windows) == 0 or not pairs:
        return np.zeros(len(windows))
    i, j = np.array(pairs).T
    dq = np.linalg.norm(query[i] - query[j], axis=1)
    dw = np.linalg.norm(windows[:, i] - windows[:, j], axis=2)
    return np.max(np.abs(dw - dq), axis=1) / np.sqrt(2.0 * (n_total or n))


def multi_segment_rmsd(query_segments: Sequence[np.ndarray], candidate_segments: Sequence[np.ndarray]) -> AlignmentResult:
    """Joint superposition of all segments under one shared rigid transform.

    Maps candidate coordinates onto the query.
    """
    if len(query_segments) != len(candidate_segments):
        raise ShapeError(
            f"segment count mismatch: {len(query_segments)} query vs {len(candidate_segments)} candidate"
        )
    for k, (a, b) in enumerate(zip(query_segments, candidate_segments)):
        if np.shape(a) != np.shape(b):
            raise ShapeError(f"segment {k} shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    q = np.concatenate([_as_points(s) for s in query_segments])
    c = np.concatenate([_as_points(s) for s in candidate_segments])
    return kabsch(c, q)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed proper rotation (from a random unit quaternion)."""
    w, x, y, z = rng.normal(size=4)
    norm = np.sqrt(w * w + x * x + y * y + z * z)
    w, x, y, z = w / norm, x / norm, y / norm, z / norm
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
