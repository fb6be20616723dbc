"""Alpha-carbon backbone model, PDB parsing, motif and framework extraction."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import EmptyStructureError, ParseError, SpanError

log = logging.getLogger(__name__)

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
MASK = "?"

THREE_TO_ONE = {
    "ALA": "A", "CYS": "C", "ASP": "D", "GLU": "E", "PHE": "F",
    "GLY": "G", "HIS": "H", "ILE": "I", "LYS": "K", "LEU": "L",
    "MET": "M", "ASN": "N", "PRO": "P", "GLN": "Q", "ARG": "R",
    "SER": "S", "THR": "T", "VAL": "V", "TRP": "W", "TYR": "Y",
    # common modified residues written as ATOM records
    "MSE": "M", "SEC": "C", "HSD": "H", "HSE": "H", "HSP": "H", "HID": "H",
    "HIE": "H", "HIP": "H", "CYX": "C",
}
ONE_TO_THREE = {v: k for k, v in list(THREE_TO_ONE.items())[:20]}

# consecutive CA distance bounds for a continuous chain
MIN_CA_STEP = 2.0
MAX_CA_STEP = 4.5
MIN_QUERY_LENGTH = 4


@dataclass(frozen=True)
class Residue:
    chain_id: str
    seq_number: int
    insertion_code: str | None
    aa: str
    ca_coord: tuple[float, float, float]

    def __post_init__(self):
        if self.aa not in AMINO_ACIDS and self.aa != "X":
            raise ValueError(f"invalid residue letter {self.aa!r}")
        if not all(np.isfinite(self.ca_coord)):
            raise ValueError("non-finite CA coordinate")


@dataclass(frozen=True)
class Chain:
    chain_id: str
    residues: tuple[Residue, ...]

    def __len__(self):
        return len(self.residues)

    @property
    def sequence(self) -> str:
        return "".join(r.aa for r in self.residues)

    @property
    def coords(self) -> np.ndarray:
        """CA coordinates as an (n, 3) float64 array (read-only)."""
        arr = self.__dict__.get("_coords")
        if arr is None:
            arr = np.array([r.ca_coord for r in self.residues], dtype=np.float64).reshape(-1, 3)
            arr.flags.writeable = False
            object.__setattr__(self, "_coords", arr)
        return arr


@dataclass(frozen=True)
class BackboneStructure:
    id: str
    chains: dict[str, Chain] = field(default_factory=dict)

    def chain(self, chain_id: str) -> Chain:
        try:
            return self.chains[chain_id]
        except KeyError:
            raise SpanError(f"structure {self.id} has no chain {chain_id!r}") from None

    @property
    def n_residues(self) -> int:
        return sum(len(c) for c in self.chains.values())


@dataclass(frozen=True)
class CdrSpan:
    chain_id: str
    start_index: int
    length: int

    def check(self, structure: BackboneStructure) -> Chain:
        chain = structure.chain(self.chain_id)
        if self.length < 1 or self.start_index < 0 or self.start_index + self.length > len(chain):
            raise SpanError(
                f"span {self.chain_id}:{self.start_index}+{self.length} out of range "
                f"for chain of {len(chain)} residues"
            )
        return chain


@dataclass(frozen=True)
class MotifQuery:
    """Ordered CA coordinate segments of a (possibly discontinuous) query loop."""

    segments: tuple[np.ndarray, ...]

    def __post_init__(self):
        segs = tuple(np.asarray(s, dtype=np.float64).reshape(-1, 3) for s in self.segments)
        if not segs or any(len(s) == 0 for s in segs):
            raise ValueError("motif segments must be non-empty")
        if sum(len(s) for s in segs) < MIN_QUERY_LENGTH:
            raise ValueError(f"motif needs at least {MIN_QUERY_LENGTH} residues")
        for s in segs:
            if not np.all(np.isfinite(s)):
                raise ValueError("non-finite motif coordinate")
            s.flags.writeable = False
        object.__setattr__(self, "segments", segs)
        steps = [np.linalg.norm(np.diff(s, axis=0), axis=1) for s in segs if len(s) > 1]
        if steps:
            steps = np.concatenate(steps)
            if np.any((steps < MIN_CA_STEP) | (steps > MAX_CA_STEP)):
                log.warning(
                    "motif CA spacing outside [%.1f, %.1f] A (min %.2f, max %.2f)",
                    MIN_CA_STEP, MAX_CA_STEP, steps.min(), steps.max(),
                )

    @property
    def total_len(self) -> int:
        return sum(len(s) for s in self.segments)

    @property
    def lengths(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.segments)

    @property
    def coords(self) -> np.ndarray:
        return np.concatenate(self.segments, axis=0)


def _field(line: str, lo: int, hi: int) -> str:
    return line[lo:hi]


def parse_backbone(data: bytes | str, format_hint: str = "pdb", structure_id: str = "") -> BackboneStructure:
    """Parse PDB fixed-column text into an alpha-carbon backbone model.

    Only ATOM records are read. Alternate locations resolve to the highest
    occupancy record (first one wins ties); residues with no CA are dropped.
    Only the first MODEL is read.
    """
    if format_hint != "pdb":
        raise ValueError(f"unsupported format {format_hint!r}")
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")

    # (chain, resseq, icode) -> [resname, coords, occupancy]
    cas: dict[tuple[str, int, str], list] = {}
    order: dict[str, list[tuple[str, int, str]]] = {}
    seen_residues: set[tuple[str, int, str]] = set()

    for lineno, raw in enumerate(data.splitlines(), start=1):
        rec = raw[:6]
        if rec == "ENDMDL":
            break
        if rec != "ATOM  " and not raw.startswith("ATOM "):
            continue
        line = raw.rstrip("\r\n")
        if len(line) < 54:
            raise ParseError("ATOM record shorter than 54 columns", lineno)
        try:
            resseq = int(_field(line, 22, 26))
            xyz = (float(_field(line, 30, 38)), float(_field(line, 38, 46)), float(_field(line, 46, 54)))
        except ValueError:
            raise ParseError("malformed residue number or coordinates", lineno) from None
        occ_text = _field(line, 54, 60).strip()
        try:
            occupancy = float(occ_text) if occ_text else 1.0
        except ValueError:
            raise ParseError("malformed occupancy", lineno) from None
        if not all(np.isfinite(xyz)):
            raise ParseError("non-finite coordinate", lineno)

        chain_id = line[21]
        icode = line[26] if len(line) > 26 else " "
        key = (chain_id, resseq, icode)
        if key not in seen_residues:
            seen_residues.add(key)
            order.setdefault(chain_id, []).append(key)

        if _field(line, 12, 16).strip() != "CA":
            continue
        resname = _field(line, 17, 20).strip()
        prev = cas.get(key)
        if prev is None or occupancy > prev[2]:
            cas[key] = [resname, xyz, occupancy]

    if not cas:
        raise EmptyStructureError(f"no alpha-carbon ATOM records in structure {structure_id!r}")

    chains: dict[str, Chain] = {}
    for chain_id, keys in order.items():
        residues = []
        for key in keys:
            hit = cas.get(key)
            if hit is None:
                continue
            icode = key[2] if key[2].strip() else None
            residues.append(Residue(chain_id, key[1], icode, THREE_TO_ONE.get(hit[0], "X"), hit[1]))
        if residues:
            chains[chain_id] = Chain(chain_id, tuple(residues))
    return BackboneStructure(structure_id, chains)


def read_pdb(path: str | os.PathLike) -> BackboneStructure:
    path = Path(path)
    return parse_backbone(path.read_bytes(), structure_id=path.stem)


def iter_corpus(directory: str | os.PathLike) -> Iterator[BackboneStructure]:
    """Yield every ``*.pdb`` / ``*.ent`` structure in a directory, sorted by filename."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".pdb", ".ent"))
    for p in files:
        yield read_pdb(p)


def format_pdb(structure: BackboneStructure) -> str:
    """Write a CA-only PDB text for a structure (used for synthetic corpora)."""
    lines = []
    serial = 1
    for chain in structure.chains.values():
        for r in chain.residues:
            resname = ONE_TO_THREE.get(r.aa, "UNK")
            x, y, z = r.ca_coord
            lines.append(
                f"ATOM  {serial:5d}  CA  {resname:>3s} {chain.chain_id:1s}{r.seq_number:4d}"
                f"{(r.insertion_code or ' '):1s}   {x:8.3f}{y:8.3f}{z:8.3f}{1.0:6.2f}{0.0:6.2f}"
                f"           C  "
            )
            serial += 1
        lines.append("TER")
    lines.append("END")
    return "\n".join(lines) + "\n"


def make_structure(structure_id: str, chains: dict[str, tuple[str, np.ndarray]]) -> BackboneStructure:
    """Build a structure from ``{chain_id: (sequence, coords)}`` with 1-based numbering."""
    out = {}
    for cid, (seq, xyz) in chains.items():
        xyz = np.asarray(xyz, dtype=np.float64)
        if len(seq) != len(xyz):
            raise ValueError("sequence and coordinate lengths differ")
        out[cid] = Chain(cid, tuple(
            Residue(cid, i + 1, None, aa, tuple(float(v) for v in xyz[i])) for i, aa in enumerate(seq)
        ))
    return BackboneStructure(structure_id, out)


def extract_motif(structure: BackboneStructure, spans: Sequence[CdrSpan]) -> MotifQuery:
    if not spans:
        raise SpanError("at least one span is required")
    segments = []
    for span in spans:
        chain = span.check(structure)
        segments.append(chain.coords[span.start_index:span.start_index + span.length].copy())
    return MotifQuery(tuple(segments))


def framework_sequence(structure: BackboneStructure, span: CdrSpan, mask: str = MASK) -> str:
    """Chain sequence with the span replaced by mask symbols."""
    chain = span.check(structure)
    seq = chain.sequence
    return seq[:span.start_index] + mask * span.length + seq[span.start_index + span.length:]


def mask_span(sequence: str, start: int, length: int, mask: str = MASK) -> str:
    if length < 1 or start < 0 or start + length > len(sequence):
        raise SpanError(f"span {start}+{length} out of range for sequence of {len(sequence)}")
    return sequence[:start] + mask * length + sequence[start + length:]


def continuous_runs(coords: np.ndarray, max_step: float = MAX_CA_STEP) -> np.ndarray:
    """Label each residue with the index of its continuous run.

    A new run starts wherever the CA-CA distance to the previous residue
    exceeds ``max_step``.
    """
    if len(coords) == 0:
        return np.zeros(0, dtype=np.int64)
    steps = np.linalg.norm(np.diff(coords, axis=0), axis=1)
    return np.concatenate([[0], np.cumsum(steps > max_step)])

