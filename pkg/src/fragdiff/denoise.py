"""Retrieval-conditioned denoisers, the grafting baseline, and pseudo-MSA export."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .diffusion import AA_INDEX, K, CategoricalSequenceState, DenoiserOutput
from .errors import ContractError, NoDataError, ShapeError
from .retrieval import FragmentMatch, rank
from .structmodel import AMINO_ACIDS, MASK

DEFAULT_K = 15
MAX_K = 64
DEFAULT_PSEUDOCOUNT = 0.1


def _usable(match: FragmentMatch, m: int) -> bool:
    return match.length == m and len(match.sequence) == m and all(a in AA_INDEX for a in match.sequence)


@dataclass(frozen=True)
class FragmentSequenceMatrix:
    rows: tuple[str, ...]
    rmsds: tuple[float, ...]
    skipped: int = 0

    def __post_init__(self):
        if len(self.rows) != len(self.rmsds):
            raise ShapeError("rows and rmsds differ in length")
        if self.rows and len({len(r) for r in self.rows}) != 1:
            raise ShapeError("fragment rows must share one length")

    @property
    def k(self) -> int:
        return len(self.rows)

    @classmethod
    def from_matches(cls, matches: Sequence[FragmentMatch], k: int, m: int) -> "FragmentSequenceMatrix":
        """Top-k length-m fragments in rank order; others are counted in ``skipped``."""
        usable = [mt for mt in rank(matches) if _usable(mt, m)]
        used = usable[:k]
        return cls(tuple(mt.sequence for mt in used), tuple(mt.rmsd for mt in used),
                   skipped=len(matches) - len(usable))


@dataclass(frozen=True)
class ProfileDenoiser:
    """Position-specific profile over retrieved fragment sequences.

    Predicts p(s^0) as ``w * pssm + (1 - w) * prior``. It ignores both the
    noisy state and the timestep.
    """

    pssm: np.ndarray
    pseudocount: float = DEFAULT_PSEUDOCOUNT
    context_prior: np.ndarray | None = None
    blend_weight: float = 1.0
    k_used: int = 0
    skipped: int = 0

    def __post_init__(self):
        pssm = np.asarray(self.pssm, dtype=np.float64)
        if pssm.ndim != 2 or pssm.shape[1] != K:
            raise ShapeError(f"pssm must be (m, {K})")
        if np.abs(pssm.sum(axis=1) - 1.0).max() > 1e-12:
            raise ContractError("pssm rows must sum to 1")
        if not 0.0 <= self.blend_weight <= 1.0:
            raise ValueError("blend_weight must lie in [0, 1]")
        if not self.pseudocount > 0:
            raise ValueError("pseudocount must be positive")
        object.__setattr__(self, "pssm", pssm)
        if self.context_prior is not None:
            prior = np.asarray(self.context_prior, dtype=np.float64)
            if prior.shape != pssm.shape:
                raise ShapeError("context prior shape does not match pssm")
            object.__setattr__(self, "context_prior", prior)

    @property
    def m(self) -> int:
        return len(self.pssm)

    def __call__(self, state: CategoricalSequenceState) -> DenoiserOutput:
        return profile_denoise(state, self)


def count_matrix(rows: Sequence[str], m: int) -> np.ndarray:
    counts = np.zeros((m, K))
    for row in rows:
        counts[np.arange(m), [AA_INDEX[a] for a in row]] += 1
    return counts


def build_profile(matches: Sequence[FragmentMatch], k: int = DEFAULT_K, pseudocount: float = DEFAULT_PSEUDOCOUNT,
                  m: int | None = None, context_prior=None, blend_weight: float = 1.0) -> ProfileDenoiser:
    """Count residues over the top-k length-m fragments and add pseudocounts.

    pssm[j, a] = (count_j(a) + pseudocount) / (k_used + 20 * pseudocount)
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not pseudocount > 0:
        raise ValueError("pseudocount must be positive")
    if m is None:
        ranked = rank(matches)
        if not ranked:
            raise NoDataError("no fragment matches to build a profile from")
        m = ranked[0].length
    matrix = FragmentSequenceMatrix.from_matches(matches, k, m)
    if matrix.k == 0:
        raise NoDataError(f"no usable fragments of length {m} ({matrix.skipped} skipped)")
    counts = count_matrix(matrix.rows, m)
    pssm = (counts + pseudocount) / (matrix.k + K * pseudocount)
    return ProfileDenoiser(pssm, pseudocount, context_prior, blend_weight, matrix.k, matrix.skipped)


def profile_denoise(state: CategoricalSequenceState, profile: ProfileDenoiser) -> DenoiserOutput:
    if state.m != profile.m:
        raise ShapeError(f"state length {state.m} does not match profile length {profile.m}")
    w = profile.blend_weight
    prior = profile.context_prior if profile.context_prior is not None else np.full_like(profile.pssm, 1.0 / K)
    out = w * profile.pssm + (1.0 - w) * prior
    return DenoiserOutput(out / out.sum(axis=1, keepdims=True))


def graft_top1(matches: Sequence[FragmentMatch], m: int) -> str:
    """Sequence of the best-ranked usable fragment of length m."""
    for match in rank(matches):
        if _usable(match, m):
            return match.sequence
    raise NoDataError(f"no usable fragment of length {m} to graft")


@dataclass(frozen=True)
class PseudoMsa:
    rows: tuple[str, ...]
    rmsds: tuple[float, ...] = field(default_factory=tuple)
    span: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if not self.rows or len({len(r) for r in self.rows}) != 1:
            raise ShapeError("pseudo-MSA rows must be non-empty and of equal length")
        if len(self.rmsds) != len(self.rows) - 1:
            raise ShapeError("need one rmsd per fragment row")


def _mask_span(framework: str) -> tuple[int, int]:
    first = framework.find(MASK)
    if first < 0:
        raise ShapeError("framework has no masked span")
    last = framework.rfind(MASK)
    if MASK * (last - first + 1) != framework[first:last + 1]:
        raise ShapeError("framework mask must be one contiguous span")
    return first, last - first + 1


def build_pseudo_msa(framework: str, noisy_cdr: str, matrix: FragmentSequenceMatrix | None = None) -> PseudoMsa:
    """Stack framework+noisy CDR over framework+fragment rows, in rank order."""
    start, m = _mask_span(framework)
    if len(noisy_cdr) != m:
        raise ShapeError(f"noisy CDR length {len(noisy_cdr)} != masked span {m}")
    prefix, suffix = framework[:start], framework[start + m:]
    rows = [prefix + noisy_cdr + suffix]
    rmsds: tuple[float, ...] = ()
    if matrix is not None and matrix.k:
        if len(matrix.rows[0]) != m:
            raise ShapeError(f"fragment length {len(matrix.rows[0])} != masked span {m}")
        rows.extend(prefix + r + suffix for r in matrix.rows)
        rmsds = tuple(matrix.rmsds)
    return PseudoMsa(tuple(rows), rmsds, (start, m))


def format_msa(msa: PseudoMsa) -> str:
    lines = [">row_0_query", msa.rows[0]]
    for i, (row, rmsd) in enumerate(zip(msa.rows[1:], msa.rmsds), start=1):
        lines.append(f">row_{i}_frag rmsd={rmsd:.6f}")
        lines.append(row)
    return "\n".join(lines) + "\n"


def export_msa(msa: PseudoMsa, path: str | os.PathLike) -> None:
    Path(path).write_bytes(format_msa(msa).encode("utf-8"))


def read_fasta(path: str | os.PathLike) -> list[tuple[str, str]]:
    records = []
    header, chunks = None, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith(">"):
            if header is not None:
                records.append((header, "".join(chunks)))
            header, chunks = line[1:], []
        elif line.strip():
            chunks.append(line.strip())
    if header is not None:
        records.append((header, "".join(chunks)))
    return records


def random_sequence(m: int, rng: np.random.Generator) -> str:
    return "".join(AMINO_ACIDS[i] for i in rng.integers(0, K, size=m))
