"""Independent reference computations used to check the library.

None of these call into fragdiff's geometry or diffusion kernels.
"""

from __future__ import annotations

import numpy as np

AA = "ACDEFGHIKLMNPQRSTVWY"


# --- rotations ---------------------------------------------------------------

def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """(..., 4) unit quaternions (w, x, y, z) -> (..., 3, 3) rotation matrices."""
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
        np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
        np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def _rodrigues(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w, axis=-1)
    small = theta < 1e-12
    k = np.where(small[..., None], 0.0, w / np.where(small, 1.0, theta)[..., None])
    kx = np.zeros(w.shape[:-1] + (3, 3))
    kx[..., 0, 1], kx[..., 0, 2] = -k[..., 2], k[..., 1]
    kx[..., 1, 0], kx[..., 1, 2] = k[..., 2], -k[..., 0]
    kx[..., 2, 0], kx[..., 2, 1] = -k[..., 1], k[..., 0]
    s = np.sin(theta)[..., None, None]
    c = np.cos(theta)[..., None, None]
    return np.eye(3) + s * kx + (1 - c) * kx @ kx


_GRID = quat_to_matrix(np.random.default_rng(12345).normal(size=(3000, 4)))


def brute_force_rmsd(pairs: list[tuple[np.ndarray, np.ndarray]], newton_iters: int = 25) -> np.ndarray:
    """Minimal RMSD for each (p, q) by rotation search, no SVD.

    Translation is removed by centering. Each instance scores a fixed grid of
    3000 rotations, then the best grid rotation is refined by Newton steps on
    the rotation manifold for the objective tr(R^T M), M = sum q_i p_i^T.
    """
    n_inst = len(pairs)
    m = np.empty((n_inst, 3, 3))
    ss = np.empty(n_inst)
    npts = np.empty(n_inst)
    for k, (p, q) in enumerate(pairs):
        pc = p - p.mean(axis=0)
        qc = q - q.mean(axis=0)
        m[k] = qc.T @ pc
        ss[k] = (pc * pc).sum() + (qc * qc).sum()
        npts[k] = len(p)

    scores = np.einsum("gij,kij->kg", _GRID, m)
    rot = _GRID[np.argmax(scores, axis=1)].copy()
    for _ in range(newton_iters):
        a = np.swapaxes(rot, 1, 2) @ m  # A = R^T M; objective tr(exp(W)^T A)
        grad = np.stack([a[:, 2, 1] - a[:, 1, 2], a[:, 0, 2] - a[:, 2, 0], a[:, 1, 0] - a[:, 0, 1]], -1)
        sym = 0.5 * (a + np.swapaxes(a, 1, 2))
        hess = sym - np.trace(a, axis1=1, axis2=2)[:, None, None] * np.eye(3)
        # fall back to a gradient step where the Hessian is not negative definite
        ok = np.all(np.linalg.eigvalsh(hess) < 0, axis=1)
        step = np.empty_like(grad)
        if ok.any():
            step[ok] = -np.linalg.solve(hess[ok], grad[ok][..., None])[..., 0]
        if (~ok).any():
            scale = np.abs(np.trace(a[~ok], axis1=1, axis2=2)) + 1.0
            step[~ok] = grad[~ok] / scale[:, None]
        rot = rot @ _rodrigues(step)
    best = np.einsum("kij,kij->k", rot, m)
    return np.sqrt(np.maximum(ss - 2 * best, 0.0) / npts)


def horn_rmsd(windows: np.ndarray, query: np.ndarray) -> np.ndarray:
    """RMSD of each (n, 3) window superposed onto query via Horn's quaternion method.

    The rotation comes from the top eigenvector of Horn's 4x4 matrix; the
    RMSD is then evaluated from explicit residuals.
    """
    qc = query - query.mean(axis=0)
    wc = windows - windows.mean(axis=1, keepdims=True)
    s = np.einsum("wna,nb->wab", wc, qc)  # S_ab = sum p_a q_b
    sxx, sxy, sxz = s[:, 0, 0], s[:, 0, 1], s[:, 0, 2]
    syx, syy, syz = s[:, 1, 0], s[:, 1, 1], s[:, 1, 2]
    szx, szy, szz = s[:, 2, 0], s[:, 2, 1], s[:, 2, 2]
    n = np.stack([
        np.stack([sxx + syy + szz, syz - szy, szx - sxz, sxy - syx], -1),
        np.stack([syz - szy, sxx - syy - szz, sxy + syx, szx + sxz], -1),
        np.stack([szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy], -1),
        np.stack([sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz], -1),
    ], -2)
    _, vecs = np.linalg.eigh(n)
    rot = quat_to_matrix(vecs[:, :, -1])
    diff = np.einsum("wij,wnj->wni", rot, wc) - qc
    return np.sqrt((diff ** 2).sum(axis=(1, 2)) / len(query))


def exhaustive_scan(query: np.ndarray, corpus, threshold: float, max_step: float = 4.5):
    """Every continuous, fully-standard window within ``threshold``; no pruning.

    Returns {(source_id, chain_id, start): (rmsd, sequence)}.
    """
    m = len(query)
    found = {}
    for s in corpus:
        for cid, chain in s.chains.items():
            xyz = np.array([r.ca_coord for r in chain.residues])
            seq = "".join(r.aa for r in chain.residues)
            starts = []
            for a in range(len(xyz) - m + 1):
                if any(c not in AA for c in seq[a:a + m]):
                    continue
                if all(np.linalg.norm(xyz[i + 1] - xyz[i]) <= max_step for i in range(a, a + m - 1)):
                    starts.append(a)
            if not starts:
                continue
            r = horn_rmsd(np.stack([xyz[a:a + m] for a in starts]), query)
            for a, v in zip(starts, r):
                if v <= threshold:
                    found[(s.id, cid, a)] = (float(v), seq[a:a + m])
    return found


def all_window_rmsds(query: np.ndarray, corpus, max_step: float = 4.5):
    """Like ``exhaustive_scan`` with an infinite threshold, for reuse across thresholds."""
    return exhaustive_scan(query, corpus, np.inf, max_step)


# --- diffusion ----------------------------------------------------------------

def kernel(beta: float) -> np.ndarray:
    """[a, b] = probability of moving from a to b in one step; built entry by entry."""
    k = np.empty((20, 20))
    for a in range(20):
        for b in range(20):
            k[a, b] = (1 - beta) * (a == b) + beta / 20
    return k


def chained_marginals(betas) -> list[np.ndarray]:
    """[s0, st] matrices for t = 0..T from explicit kernel products."""
    out = [np.eye(20)]
    for b in betas:
        out.append(out[-1] @ kernel(b))
    return out


def bayes_posterior(s_t: int, s0: int, t: int, betas, marg=None) -> np.ndarray:
    """q(s^{t-1} | s^t, s^0) by enumerating all 20 values of s^{t-1}."""
    marg = marg if marg is not None else chained_marginals(betas[:t])
    k = kernel(betas[t - 1])
    w = np.array([k[b, s_t] * marg[t - 1][s0, b] for b in range(20)])
    return w / w.sum()


def bayes_posterior_table(t: int, betas, marg) -> np.ndarray:
    """[s_t, s0, s_{t-1}] for all 400 (s_t, s0) pairs, one enumerated s_{t-1} value at a time."""
    k = kernel(betas[t - 1])
    w = np.empty((20, 20, 20))
    for b in range(20):
        w[:, :, b] = k[b, :, None] * marg[t - 1][None, :, b]
    return w / w.sum(axis=2, keepdims=True)


def kl(q: np.ndarray, p: np.ndarray) -> float:
    total = 0.0
    for qi, pi in zip(q, p):
        if qi > 0:
            if pi <= 0:
                return float("inf")
            total += qi * np.log(qi / pi)
    return total
