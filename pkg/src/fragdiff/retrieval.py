"""Structural search for CDR-like fragments and the on-disk fragment database.

The search slides a window of the query length along every continuous
stretch of every chain, discards windows whose cheap distance-based lower
bound already exceeds the RMSD threshold, and superposes the survivors.
Because the bound is admissible, the result set is identical to an
exhaustive scan.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import itertools
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, CorruptionError, DataError, DomainError, VersionError
from .geom import batch_rmsd, batch_rmsd_bound
from .structmodel import AMINO_ACIDS, MIN_QUERY_LENGTH, BackboneStructure, MotifQuery, continuous_runs

log = logging.getLogger(__name__)

DB_VERSION = 1
DEFAULT_MULTISEG_CAP = 64
TSV_HEADER = "query_id\tsource_id\tchain\tstart_index\tlength\trmsd\tsequence"


@dataclass(frozen=True)
class FragmentMatch:
    source_id: str
    chain_id: str
    start_index: int
    length: int
    rmsd: float
    sequence: str
    # (chain_id, start_index, length) per segment; only set for multi-segment hits
    segments: tuple[tuple[str, int, int], ...] | None = None

    def __post_init__(self):
        if self.rmsd < 0:
            raise ValueError("rmsd must be non-negative")
        if len(self.sequence) != self.length:
            raise ValueError(f"sequence length {len(self.sequence)} != length {self.length}")

    @property
    def sort_key(self):
        return (self.rmsd, self.source_id, self.chain_id, self.start_index, self.segments or ())

    @property
    def location(self) -> tuple[str, str, int]:
        return (self.source_id, self.chain_id, self.start_index)


@dataclass(frozen=True)
class SearchConfig:
    rmsd_threshold: float
    exclude_source: tuple[str, str, int] | None = None
    dedupe_sequences: bool = False
    max_results: int | None = None
    multiseg_cap: int | None = DEFAULT_MULTISEG_CAP

    def __post_init__(self):
        if not self.rmsd_threshold > 0:
            raise ConfigError("rmsd_threshold must be positive")
        if self.max_results is not None and self.max_results < 0:
            raise ConfigError("max_results must be non-negative")


@dataclass
class SearchStats:
    structures: int = 0
    windows: int = 0
    pruned: int = 0
    aligned: int = 0
    unknown_residue: int = 0
    excluded: int = 0
    deduplicated: int = 0

    def merge(self, other: "SearchStats") -> None:
        for f in dataclasses.fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))


@dataclass(frozen=True)
class ThresholdRule:
    """RMSD cutoff that grows linearly with loop length up to a cap."""

    base: float = 0.4
    per_residue: float = 0.05
    cap: float = 1.0

    def __call__(self, length: int) -> float:
        if length < MIN_QUERY_LENGTH:
            raise DomainError(f"threshold defined for length >= {MIN_QUERY_LENGTH}, got {length}")
        # round away binary noise so 0.4 + 6 * 0.05 is exactly 0.7
        return min(round(self.base + self.per_residue * (length - MIN_QUERY_LENGTH), 10), self.cap)

    def to_dict(self) -> dict:
        return {"base": self.base, "per_residue": self.per_residue, "cap": self.cap}


def default_threshold(length: int) -> float:
    return ThresholdRule()(length)


def rank(matches: Iterable[FragmentMatch]) -> list[FragmentMatch]:
    """Ascending by (rmsd, source_id, chain_id, start_index); stable."""
    return sorted(matches, key=lambda m: m.sort_key)


@dataclass
class _ChainWindows:
    chain_id: str
    starts: np.ndarray
    coords: np.ndarray  # (W, m, 3)
    sequence: str


def _chain_windows(structure: BackboneStructure, m: int, stats: SearchStats) -> list[_ChainWindows]:
    out = []
    for chain in structure.chains.values():
        n = len(chain)
        if n < m:
            continue
        coords = chain.coords
        runs = continuous_runs(coords)
        starts = np.arange(n - m + 1)
        contiguous = runs[starts] == runs[starts + m - 1]
        seq = chain.sequence
        bad = np.fromiter((aa not in AMINO_ACIDS for aa in seq), dtype=bool, count=n)
        bad_count = np.concatenate([[0], np.cumsum(bad)])
        has_bad = (bad_count[starts + m] - bad_count[starts]) > 0
        stats.windows += int(contiguous.sum())
        stats.unknown_residue += int((contiguous & has_bad).sum())
        keep = starts[contiguous & ~has_bad]
        if len(keep) == 0:
            continue
        stack = sliding_window_view(coords, m, axis=0).transpose(0, 2, 1)[keep]
        out.append(_ChainWindows(chain.chain_id, keep, stack, seq))
    return out


def _search_single(query: np.ndarray, structure: BackboneStructure, threshold: float) -> tuple[list[FragmentMatch], SearchStats]:
    stats = SearchStats(structures=1)
    m = len(query)
    hits = []
    for cw in _chain_windows(structure, m, stats):
        bound = batch_rmsd_bound(cw.coords, query)
        survive = np.flatnonzero(bound <= threshold)
        stats.pruned += len(bound) - len(survive)
        if len(survive) == 0:
            continue
        stats.aligned += len(survive)
        rmsd = batch_rmsd(cw.coords[survive], query)
        for idx, r in zip(survive[rmsd <= threshold], rmsd[rmsd <= threshold]):
            start = int(cw.starts[idx])
            hits.append(FragmentMatch(structure.id, cw.chain_id, start, m, float(r), cw.sequence[start:start + m]))
    return hits, stats


def _search_multi(query: MotifQuery, structure: BackboneStructure, threshold: float, cap: int | None) -> tuple[list[FragmentMatch], SearchStats]:
    stats = SearchStats(structures=1)
    n_total = query.total_len
    q_all = query.coords
    # per-segment candidate windows: (chain_id, start, coords, sequence)
    candidates = []
    for seg in query.segments:
        m = len(seg)
        pool = []
        for cw in _chain_windows(structure, m, stats):
            bound = batch_rmsd_bound(cw.coords, seg, n_total=n_total)
            ok = np.flatnonzero(bound <= threshold)
            stats.pruned += len(bound) - len(ok)
            for idx in ok:
                start = int(cw.starts[idx])
                pool.append((float(bound[idx]), cw.chain_id, start, cw.coords[idx], cw.sequence[start:start + m]))
        pool.sort(key=lambda c: c[:3])
        if cap:
            pool = pool[:cap]
        if not pool:
            return [], stats
        candidates.append(pool)

    q_first = np.array([0] + list(np.cumsum(query.lengths)[:-1]))
    seg_pairs = list(itertools.combinations(range(len(query.segments)), 2))
    q_cross = {(a, b): np.linalg.norm(q_all[q_first[a]] - q_all[q_first[b]]) for a, b in seg_pairs}
    scale = np.sqrt(2.0 * n_total)

    tuples = []
    for combo in itertools.product(*candidates):
        clash = False
        for a, b in seg_pairs:
            ca, cb = combo[a], combo[b]
            if ca[1] == cb[1] and ca[2] < cb[2] + len(cb[4]) and cb[2] < ca[2] + len(ca[4]):
                clash = True
                break
            d = np.linalg.norm(ca[3][0] - cb[3][0])
            if abs(d - q_cross[(a, b)]) / scale > threshold:
                clash = True
                stats.pruned += 1
                break
        if not clash:
            tuples.append(combo)
    if not tuples:
        return [], stats

    stats.aligned += len(tuples)
    hits = []
    for lo in range(0, len(tuples), 4096):
        chunk = tuples[lo:lo + 4096]
        stack = np.stack([np.concatenate([c[3] for c in combo]) for combo in chunk])
        rmsd = batch_rmsd(stack, q_all)
        for combo, r in zip(chunk, rmsd):
            if r > threshold:
                continue
            segs = tuple((c[1], c[2], len(c[4])) for c in combo)
            hits.append(FragmentMatch(
                structure.id, segs[0][0], segs[0][1], n_total, float(r),
                "".join(c[4] for c in combo), segments=segs,
            ))
    return hits, stats


def search(query: MotifQuery, corpus: Iterable[BackboneStructure], cfg: SearchConfig,
           threads: int = 1, stats: SearchStats | None = None) -> list[FragmentMatch]:
    """Find every corpus fragment within ``cfg.rmsd_threshold`` of the query.

    Results are filtered (own occurrence, optional sequence dedupe), ranked,
    and truncated to ``cfg.max_results``. Pass a ``SearchStats`` to collect
    counters.
    """
    if query.total_len < MIN_QUERY_LENGTH:
        raise DomainError(f"query must have at least {MIN_QUERY_LENGTH} residues")
    threshold = cfg.rmsd_threshold
    if len(query.segments) == 1:
        q = query.segments[0]

        def work(s):
            return _search_single(q, s, threshold)
    else:
        def work(s):
            return _search_multi(query, s, threshold, cfg.multiseg_cap)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, corpus))
    else:
        results = [work(s) for s in corpus]

    total = stats if stats is not None else SearchStats()
    matches = []
    for hits, st in results:
        matches.extend(hits)
        total.merge(st)

    if cfg.exclude_source is not None:
        ex = (cfg.exclude_source[0], cfg.exclude_source[1], int(cfg.exclude_source[2]))
        kept = [m for m in matches if m.location != ex]
        total.excluded += len(matches) - len(kept)
        matches = kept

    matches = rank(matches)
    if cfg.dedupe_sequences:
        seen = set()
        unique = []
        for m in matches:
            if m.sequence not in seen:
                seen.add(m.sequence)
                unique.append(m)
        total.deduplicated += len(matches) - len(unique)
        matches = unique
    if cfg.max_results is not None:
        matches = matches[:cfg.max_results]
    return matches


@dataclass(frozen=True)
class QuerySpec:
    """A database query: id, motif, and optionally where the motif came from."""

    query_id: str
    motif: MotifQuery
    source: tuple[str, str, int] | None = None


@dataclass
class FragmentDatabase:
    entries: dict[str, list[FragmentMatch]]
    manifest: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, FragmentDatabase):
            return NotImplemented
        strip = lambda d: {k: v for k, v in d.items() if k != "fragments_sha256"}  # noqa: E731
        return self.entries == other.entries and strip(self.manifest) == strip(other.manifest)

    def matches(self, query_id: str) -> list[FragmentMatch]:
        try:
            return self.entries[query_id]
        except KeyError:
            raise DataError(f"query id {query_id!r} not in database") from None

    def query_length(self, query_id: str) -> int:
        info = self.manifest.get("query_info", {}).get(query_id)
        if info is None:
            raise DataError(f"query id {query_id!r} not in database")
        return int(info["length"])


def _as_spec(q) -> QuerySpec:
    if isinstance(q, QuerySpec):
        return q
    return QuerySpec(*q)


def build_database(cdr_queries: Sequence, corpus: Iterable[BackboneStructure],
                   rule: ThresholdRule | None = None, threads: int = 1,
                   multiseg_cap: int | None = DEFAULT_MULTISEG_CAP,
                   corpus_dir: str | None = None) -> FragmentDatabase:
    """Run the search for every query and collect ranked matches.

    Each query's own location is excluded; sequences are not deduplicated.
    Stored RMSDs are rounded to 6 decimals so that save/load is lossless.
    """
    rule = rule or ThresholdRule()
    specs = [_as_spec(q) for q in cdr_queries]
    ids = [s.query_id for s in specs]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ConfigError(f"duplicate query ids: {', '.join(dupes)}")
    for qid in ids:
        if not qid or any(c in qid for c in "\t\n\r"):
            raise ConfigError(f"invalid query id {qid!r}")
    corpus = list(corpus)

    entries = {}
    info = {}
    for spec in sorted(specs, key=lambda s: s.query_id):
        threshold = rule(spec.motif.total_len)
        cfg = SearchConfig(threshold, exclude_source=spec.source, dedupe_sequences=False,
                           multiseg_cap=multiseg_cap)
        stats = SearchStats()
        hits = search(spec.motif, corpus, cfg, threads=threads, stats=stats)
        hits = rank(dataclasses.replace(h, rmsd=round(h.rmsd, 6)) for h in hits)
        entries[spec.query_id] = hits
        info[spec.query_id] = {
            "length": spec.motif.total_len,
            "segments": list(spec.motif.lengths),
            "threshold": threshold,
            "source": list(spec.source) if spec.source else None,
        }
        log.info("query %s: %d matches (%d windows, %d pruned, %d aligned)",
                 spec.query_id, len(hits), stats.windows, stats.pruned, stats.aligned)

    manifest = {
        "version": DB_VERSION,
        "threshold_rule": rule.to_dict(),
        "corpus_size": len(corpus),
        "queries": len(specs),
        "multiseg_cap": multiseg_cap or 0,
    }
    if corpus_dir is not None:
        manifest["corpus_dir"] = str(corpus_dir)
    manifest["query_info"] = info
    return FragmentDatabase(entries, manifest)


def _format_fragments(db: FragmentDatabase) -> bytes:
    buf = io.StringIO(newline="")
    buf.write(TSV_HEADER + "\n")
    for qid in sorted(db.entries):
        for m in db.entries[qid]:
            if m.segments:
                chain = ";".join(s[0] for s in m.segments)
                start = ";".join(str(s[1]) for s in m.segments)
                length = ";".join(str(s[2]) for s in m.segments)
            else:
                chain, start, length = m.chain_id, str(m.start_index), str(m.length)
            buf.write(f"{qid}\t{m.source_id}\t{chain}\t{start}\t{length}\t{m.rmsd:.6f}\t{m.sequence}\n")
    return buf.getvalue().encode("utf-8")


def save_database(db: FragmentDatabase, path: str | os.PathLike) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    payload = _format_fragments(db)
    manifest = {k: v for k, v in db.manifest.items() if k != "fragments_sha256"}
    manifest.setdefault("version", DB_VERSION)
    manifest["fragments_sha256"] = hashlib.sha256(payload).hexdigest()
    (path / "fragments.tsv").write_bytes(payload)
    (path / "manifest.json").write_bytes((json.dumps(manifest, indent=2) + "\n").encode("utf-8"))


def _parse_row(fields: list[str], lineno: int) -> tuple[str, FragmentMatch]:
    if len(fields) != 7:
        raise CorruptionError(f"fragments.tsv line {lineno}: expected 7 fields, got {len(fields)}")
    qid, source, chain, start, length, rmsd, seq = fields
    try:
        if ";" in chain:
            chains = chain.split(";")
            starts = [int(s) for s in start.split(";")]
            lengths = [int(s) for s in length.split(";")]
            if not len(chains) == len(starts) == len(lengths):
                raise ValueError("segment field lengths differ")
            segs = tuple(zip(chains, starts, lengths))
            match = FragmentMatch(source, chains[0], starts[0], sum(lengths), float(rmsd), seq, segs)
        else:
            match = FragmentMatch(source, chain, int(start), int(length), float(rmsd), seq)
    except ValueError as exc:
        raise CorruptionError(f"fragments.tsv line {lineno}: {exc}") from None
    return qid, match


def load_database(path: str | os.PathLike) -> FragmentDatabase:
    path = Path(path)
    manifest_path = path / "manifest.json"
    frag_path = path / "fragments.tsv"
    if not path.is_dir() or not manifest_path.exists():
        raise DataError(f"no fragment database at {path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptionError(f"manifest.json is not valid JSON: {exc}") from None
    if not isinstance(manifest, dict):
        raise CorruptionError("manifest.json must hold an object")
    if manifest.get("version") != DB_VERSION:
        raise VersionError(f"unsupported database version {manifest.get('version')!r} (expected {DB_VERSION})")
    if not frag_path.exists():
        raise CorruptionError("fragments.tsv is missing")
    payload = frag_path.read_bytes()
    expected = manifest.get("fragments_sha256")
    if expected is None or hashlib.sha256(payload).hexdigest() != expected:
        raise CorruptionError("fragments.tsv checksum mismatch")

    text = payload.decode("utf-8")
    lines = text.split("\n")
    if not lines or lines[0] != TSV_HEADER:
        raise CorruptionError("fragments.tsv header mismatch")
    if lines[-1] != "":
        raise CorruptionError("fragments.tsv does not end with a newline")
    entries: dict[str, list[FragmentMatch]] = {qid: [] for qid in sorted(manifest.get("query_info", {}))}
    for lineno, line in enumerate(lines[1:-1], start=2):
        qid, match = _parse_row(line.split("\t"), lineno)
        entries.setdefault(qid, []).append(match)
    return FragmentDatabase(entries, manifest)
