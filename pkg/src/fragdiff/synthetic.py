"""Synthetic CA traces and fragment-family corpora for tests and demos."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geom import random_rotation
from .structmodel import AMINO_ACIDS, BackboneStructure, format_pdb, make_structure

CA_STEP = 3.8


def _place(a, b, c, bond, angle, torsion):
    """Position of the next point given the previous three (NeRF construction)."""
    bc = c - b
    bc /= np.linalg.norm(bc)
    n = np.cross(b - a, bc)
    n /= np.linalg.norm(n)
    m = np.cross(n, bc)
    d2 = np.array([-bond * np.cos(angle), bond * np.sin(angle) * np.cos(torsion), bond * np.sin(angle) * np.sin(torsion)])
    return c + d2[0] * bc + d2[1] * m + d2[2] * n


def ca_walk(n: int, rng: np.random.Generator, start: np.ndarray | None = None,
            torsion_modes=(0.87, -2.9, -1.4), noise: float = 0.35) -> np.ndarray:
    """Protein-like CA trace: 3.8 A steps, ~95-120 degree virtual angles, clustered torsions."""
    pts = np.zeros((max(n, 3), 3))
    pts[0] = np.zeros(3) if start is None else start
    d = rng.normal(size=3)
    pts[1] = pts[0] + CA_STEP * d / np.linalg.norm(d)
    perp = np.cross(d, rng.normal(size=3))
    perp /= np.linalg.norm(perp)
    ang = np.deg2rad(110)
    u = (pts[1] - pts[0]) / CA_STEP
    pts[2] = pts[1] + CA_STEP * (np.cos(np.pi - ang) * u + np.sin(np.pi - ang) * perp)
    for i in range(3, n):
        angle = np.deg2rad(rng.uniform(88, 122))
        torsion = rng.choice(torsion_modes) + rng.normal(scale=noise)
        pts[i] = _place(pts[i - 3], pts[i - 2], pts[i - 1], CA_STEP, angle, torsion)
    return pts[:n]


def random_sequence(n: int, rng: np.random.Generator) -> str:
    return "".join(rng.choice(list(AMINO_ACIDS), size=n))


def jitter(coords: np.ndarray, max_shift: float, rng: np.random.Generator) -> np.ndarray:
    """Move each point in a random direction by at most ``max_shift``."""
    d = rng.normal(size=coords.shape)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return coords + d * rng.uniform(0, max_shift, size=(len(coords), 1))


def embed(motif: np.ndarray, prefix: int, suffix: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Chain with a rigidly re-placed copy of ``motif`` joined at 3.8 A to random flanks.

    Returns the coordinates and the motif's start index.
    """
    head = ca_walk(prefix, rng) if prefix else np.zeros((0, 3))
    rot = random_rotation(rng)
    placed = (motif - motif[0]) @ rot.T
    if prefix:
        d = rng.normal(size=3)
        placed = placed + head[-1] + CA_STEP * d / np.linalg.norm(d)
    else:
        placed = placed + rng.normal(scale=10, size=3)
    parts = [head, placed]
    if suffix:
        d = rng.normal(size=3)
        tail = ca_walk(suffix, rng, start=placed[-1] + CA_STEP * d / np.linalg.norm(d))
        parts.append(tail)
    return np.concatenate(parts), prefix


def profile_sequence(modal: str, p_modal: float, rng: np.random.Generator) -> str:
    """Keep each modal letter with probability ``p_modal``, else substitute a different letter."""
    out = []
    for aa in modal:
        if rng.random() < p_modal:
            out.append(aa)
        else:
            out.append(rng.choice([a for a in AMINO_ACIDS if a != aa]))
    return "".join(out)


@dataclass
class FamilyCorpus:
    query: BackboneStructure
    query_chain: str
    query_start: int
    motif_len: int
    modal: str
    corpus: list[BackboneStructure]

    def write(self, directory: str | os.PathLike) -> Path:
        """Write every corpus structure plus the query as ``<id>.pdb`` files."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for s in self.corpus:
            (directory / f"{s.id}.pdb").write_text(format_pdb(s))
        return directory


def family_corpus(seed: int = 0, motif_len: int = 12, n_decoys: int = 50, max_jitter: float = 0.3,
                  p_modal: float = 0.8, chain_len: int = 60, exact_copy: bool = True,
                  include_query: bool = True) -> FamilyCorpus:
    """A loop motif embedded with jitter in decoy chains whose loop sequences follow a sharp profile.

    With ``exact_copy`` one extra structure carries an unjittered copy of the
    motif labelled with the modal sequence.
    """
    rng = np.random.default_rng(seed)
    motif = ca_walk(motif_len, rng)
    modal = random_sequence(motif_len, rng)

    q_coords, q_start = embed(motif, 20, 30, rng)
    q_seq = random_sequence(20, rng) + modal + random_sequence(30, rng)
    query = make_structure("query", {"H": (q_seq, q_coords)})
    q_motif = q_coords[q_start:q_start + motif_len]

    corpus = [query] if include_query else []
    for i in range(n_decoys):
        prefix = int(rng.integers(3, chain_len - motif_len - 3))
        coords, start = embed(jitter(q_motif, max_jitter, rng), prefix, chain_len - motif_len - prefix, rng)
        seq = random_sequence(prefix, rng) + profile_sequence(modal, p_modal, rng) \
            + random_sequence(chain_len - motif_len - prefix, rng)
        corpus.append(make_structure(f"decoy{i:03d}", {"A": (seq, coords)}))
    if exact_copy:
        coords, start = embed(q_motif, 10, 10, rng)
        seq = random_sequence(10, rng) + modal + random_sequence(10, rng)
        corpus.append(make_structure("exact", {"A": (seq, coords)}))
    return FamilyCorpus(query, "H", q_start, motif_len, modal, corpus)


def random_corpus(n_chains: int, chain_len: int, rng: np.random.Generator, prefix: str = "rand") -> list[BackboneStructure]:
    return [
        make_structure(f"{prefix}{i:04d}", {"A": (random_sequence(chain_len, rng), ca_walk(chain_len, rng))})
        for i in range(n_chains)
    ]
