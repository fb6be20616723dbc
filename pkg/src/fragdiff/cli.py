"""Command-line interface.

Exit codes: 0 success, 1 usage/configuration error, 2 data error
(unreadable or corrupt input), 3 contract violation (invalid distributions).
Logs go to stderr; data goes to stdout or the files named by ``--out``.
"""

from __future__ import annotations

import argparse
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config, load_config
from .denoise import FragmentSequenceMatrix, build_pseudo_msa, build_profile, export_msa, graft_top1, read_fasta
from .diffusion import make_schedule, sample, uniform_denoiser
from .errors import ConfigError, ContractError, DataError, DomainError, NoDataError, ShapeError, SpanError
from .evaluate import (BenchmarkConfig, format_k_table, format_report, k_sweep, read_labels,
                       run_benchmark, sample_seed)
from .retrieval import (TSV_HEADER, QuerySpec, SearchConfig, ThresholdRule, build_database,
                        load_database, save_database, search)
from .structmodel import AMINO_ACIDS, MASK, CdrSpan, extract_motif, iter_corpus, read_pdb

log = logging.getLogger("fragdiff")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONTRACT = 0, 1, 2, 3
COMMANDS = ("build-db", "query", "graft", "sample", "export-msa", "eval", "version")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _setup_logging(level: str) -> None:
    root = logging.getLogger()
    for h in list(root.handlers):
        if getattr(h, "_fragdiff", False):
            root.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler._fragdiff = True
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s"))
    root.addHandler(handler)
    root.setLevel(getattr(logging, level.upper(), logging.INFO))


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            seeds = tuple(range(int(lo), int(hi) + 1))
        else:
            seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r} (use 0..7 or 0,1,2)") from None
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("k values must be positive integers")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--threads", type=int, help="worker threads (default: logical CPUs)")
    common.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"])

    parser = _Parser(prog="fragdiff", description="Structural fragment retrieval and retrieval-conditioned CDR design.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}", parser_class=_Parser)

    p = sub.add_parser("build-db", parents=[common], help="search every query against a corpus and save the database")
    p.add_argument("--corpus", help="directory of PDB files")
    p.add_argument("--queries", required=True,
                   help="TSV: query_id, pdb, chain, start, length (';'-separated for multi-segment)")
    p.add_argument("--out", help="output database directory")
    p.add_argument("--cap", type=int, default=None, help="multi-segment candidate cap per segment (0 = no cap)")

    p = sub.add_parser("query", parents=[common], help="live search of one loop against the database's corpus")
    p.add_argument("--db", help="database directory (supplies corpus and threshold rule)")
    p.add_argument("--pdb", required=True)
    p.add_argument("--chain", required=True)
    p.add_argument("--start", type=int, required=True, help="0-based residue index")
    p.add_argument("--len", dest="length", type=int, required=True)
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--corpus", help="override the corpus directory recorded in the database")

    p = sub.add_parser("graft", parents=[common], help="print the top-1 fragment sequence")
    p.add_argument("--db")
    p.add_argument("--query-id", required=True)

    p = sub.add_parser("sample", parents=[common], help="sample CDR sequences conditioned on retrieved fragments")
    p.add_argument("--db")
    p.add_argument("--query-id", required=True)
    p.add_argument("--len", dest="length", type=int, help="span length (default: query length)")
    p.add_argument("--steps", type=int)
    p.add_argument("--schedule", choices=["cosine", "linear"])
    p.add_argument("--k", type=int)
    p.add_argument("--lambda", dest="pseudocount", type=float)
    p.add_argument("--blend-weight", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--num-samples", type=int, default=8)
    p.add_argument("--stochastic-final", action="store_true", default=None)
    p.add_argument("--trace", action="store_true", help="record the mean KL trace against the decoded sequence")
    p.add_argument("--out", help="output TSV (default: stdout)")

    p = sub.add_parser("export-msa", parents=[common], help="write the pseudo-MSA as aligned FASTA")
    p.add_argument("--db")
    p.add_argument("--query-id", required=True)
    p.add_argument("--framework", required=True, help=f"file holding the masked framework sequence ('{MASK}' marks the CDR)")
    p.add_argument("--k", type=int)
    p.add_argument("--noisy", help="CDR sequence for the first row (default: uniform random draw)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", parents=[common], help="grafting and diffusion AAR over labeled queries")
    p.add_argument("--db")
    p.add_argument("--labels", required=True, help="TSV: query_id, true_sequence[, framework]")
    p.add_argument("--k", type=int)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--seeds", type=_parse_seeds, default=None, help="e.g. 0..7 or 0,1,2")
    p.add_argument("--steps", type=int)
    p.add_argument("--schedule", choices=["cosine", "linear"])
    p.add_argument("--lambda", dest="pseudocount", type=float)
    p.add_argument("--blend-weight", type=float)
    p.add_argument("--stochastic-final", action="store_true", default=None)
    p.add_argument("--k-sweep", type=_parse_ints, help="comma-separated k values, e.g. 1,5,15")
    p.add_argument("--sweep-out", help="k-sweep TSV (default: stdout)")
    p.add_argument("--out", help="report TSV (default: stdout)")

    sub.add_parser("version", parents=[common], help="print the version")
    return parser


def _resolve(args) -> Config:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "corpus", None):
        cfg.corpus_dir = args.corpus
    if getattr(args, "db", None):
        cfg.db_dir = args.db
    for flag, section, name in (("steps", "diffusion", "T"), ("schedule", "diffusion", "schedule_kind"),
                                ("stochastic_final", "diffusion", "stochastic_final"),
                                ("k", "denoise", "k"), ("pseudocount", "denoise", "pseudocount"),
                                ("blend_weight", "denoise", "blend_weight")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(getattr(cfg, section), name, value)
    return cfg.validate()


def _require(value, flag):
    if not value:
        raise ConfigError(f"{flag} is required (flag or config file)")
    return value


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_bytes(text.encode("utf-8"))
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def _read_queries(path: Path) -> list[QuerySpec]:
    if not path.exists():
        raise DataError(f"queries file not found: {path}")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].split("\t")[:5] != ["query_id", "pdb", "chain", "start", "length"]:
        raise DataError("queries TSV must start with header query_id, pdb, chain, start, length")
    specs = []
    cache = {}
    for lineno, line in enumerate(lines[1:], start=2):
        f = line.split("\t")
        if len(f) < 5:
            raise DataError(f"queries line {lineno}: expected 5 fields")
        qid, pdb, chains, starts, lengths = f[:5]
        pdb_path = Path(pdb) if Path(pdb).is_absolute() else path.parent / pdb
        if pdb_path not in cache:
            if not pdb_path.exists():
                raise DataError(f"queries line {lineno}: PDB file not found: {pdb_path}")
            cache[pdb_path] = read_pdb(pdb_path)
        structure = cache[pdb_path]
        try:
            cs = chains.split(";")
            ss = [int(x) for x in starts.split(";")]
            ls = [int(x) for x in lengths.split(";")]
        except ValueError:
            raise DataError(f"queries line {lineno}: start/length must be integers") from None
        if not len(cs) == len(ss) == len(ls):
            raise DataError(f"queries line {lineno}: segment lists differ in length")
        try:
            motif = extract_motif(structure, [CdrSpan(c, s, n) for c, s, n in zip(cs, ss, ls)])
        except SpanError as exc:
            raise DataError(f"queries line {lineno}: {exc}") from None
        except ValueError as exc:
            raise DataError(f"queries line {lineno}: {exc}") from None
        specs.append(QuerySpec(qid, motif, (structure.id, cs[0], ss[0])))
    return specs


def cmd_build_db(args, cfg: Config) -> int:
    corpus_dir = _require(cfg.corpus_dir, "--corpus")
    out = _require(args.out or cfg.db_dir, "--out")
    queries = _read_queries(Path(args.queries))
    corpus = list(iter_corpus(corpus_dir))
    log.info("loaded %d corpus structures and %d queries", len(corpus), len(queries))
    rule = ThresholdRule(**vars(cfg.threshold_rule))
    cap = 64 if args.cap is None else args.cap
    db = build_database(queries, corpus, rule, threads=cfg.threads, multiseg_cap=cap or None, corpus_dir=corpus_dir)
    save_database(db, out)
    log.info("wrote database with %d queries, %d matches to %s",
             len(db.entries), sum(len(v) for v in db.entries.values()), out)
    return EXIT_OK


def cmd_query(args, cfg: Config) -> int:
    db_dir = args.db or cfg.db_dir
    manifest = load_database(db_dir).manifest if db_dir else {}
    corpus_dir = args.corpus or manifest.get("corpus_dir") or cfg.corpus_dir
    corpus_dir = _require(corpus_dir, "--corpus (or a database recording one)")
    rule_dict = manifest.get("threshold_rule") or vars(cfg.threshold_rule)
    rule = ThresholdRule(**rule_dict)
    structure = read_pdb(args.pdb)
    motif = extract_motif(structure, [CdrSpan(args.chain, args.start, args.length)])
    search_cfg = SearchConfig(rule(motif.total_len), exclude_source=(structure.id, args.chain, args.start),
                              max_results=args.topk)
    hits = search(motif, iter_corpus(corpus_dir), search_cfg, threads=cfg.threads)
    buf = io.StringIO(newline="")
    buf.write(TSV_HEADER + "\n")
    for m in hits:
        buf.write(f"{structure.id}\t{m.source_id}\t{m.chain_id}\t{m.start_index}\t{m.length}\t{m.rmsd:.6f}\t{m.sequence}\n")
    _write(buf.getvalue(), None)
    return EXIT_OK


def cmd_graft(args, cfg: Config) -> int:
    db = load_database(_require(cfg.db_dir, "--db"))
    m = db.query_length(args.query_id)
    _write(graft_top1(db.matches(args.query_id), m) + "\n", None)
    return EXIT_OK


def cmd_sample(args, cfg: Config) -> int:
    db = load_database(_require(cfg.db_dir, "--db"))
    matches = db.matches(args.query_id)
    m = args.length or db.query_length(args.query_id)
    if args.num_samples < 1:
        raise ConfigError("--num-samples must be >= 1")
    schedule = make_schedule(cfg.diffusion.T, cfg.diffusion.schedule_kind)
    try:
        denoiser = build_profile(matches, cfg.denoise.k, cfg.denoise.pseudocount, m,
                                 blend_weight=cfg.denoise.blend_weight)
        log.info("profile from %d fragments (%d skipped)", denoiser.k_used, denoiser.skipped)
    except NoDataError as exc:
        log.warning("%s; falling back to uniform denoiser", exc)
        denoiser = uniform_denoiser
    buf = io.StringIO(newline="")
    buf.write("sample_idx\tsequence\tmean_kl_trace\n")
    for i in range(args.num_samples):
        res = sample(m, schedule, denoiser, sample_seed(cfg.seed, args.query_id, i),
                     stochastic_final=cfg.diffusion.stochastic_final, trace=args.trace)
        kl = "NA" if res.mean_kl is None else f"{res.mean_kl:.6f}"
        buf.write(f"{i}\t{res.sequence}\t{kl}\n")
    _write(buf.getvalue(), args.out)
    return EXIT_OK


def _read_framework(path: str) -> str:
    p = Path(path)
    if not p.exists():
        raise DataError(f"framework file not found: {path}")
    records = read_fasta(p)
    if records:
        return records[0][1]
    lines = [ln.strip() for ln in p.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise DataError("framework file is empty")
    return "".join(lines)


def cmd_export_msa(args, cfg: Config) -> int:
    db = load_database(_require(cfg.db_dir, "--db"))
    matches = db.matches(args.query_id)
    framework = _read_framework(args.framework)
    m = framework.count(MASK)
    if m == 0:
        raise DataError(f"framework has no '{MASK}' masked positions")
    if args.noisy:
        noisy = args.noisy
    else:
        rng = np.random.default_rng(sample_seed(cfg.seed, args.query_id, 0))
        noisy = "".join(AMINO_ACIDS[i] for i in rng.integers(0, len(AMINO_ACIDS), size=m))
    matrix = FragmentSequenceMatrix.from_matches(matches, cfg.denoise.k, m)
    if matrix.skipped:
        log.info("skipped %d fragments of mismatched length or unknown residues", matrix.skipped)
    msa = build_pseudo_msa(framework, noisy, matrix)
    export_msa(msa, args.out)
    log.info("wrote %d-row pseudo-MSA to %s", len(msa.rows), args.out)
    return EXIT_OK


def cmd_eval(args, cfg: Config) -> int:
    db = load_database(_require(cfg.db_dir, "--db"))
    labels_path = Path(args.labels)
    if not labels_path.exists():
        raise DataError(f"labels file not found: {labels_path}")
    queries = read_labels(labels_path.read_text(encoding="utf-8"))
    for q in queries:
        info = db.manifest.get("query_info", {}).get(q.query_id)
        if info is not None and int(info["length"]) != len(q.true_sequence):
            raise DataError(f"label for {q.query_id} has length {len(q.true_sequence)}, database says {info['length']}")
        if any(a not in AMINO_ACIDS for a in q.true_sequence):
            raise DataError(f"label for {q.query_id} contains non-standard residues")
    if args.samples < 1:
        raise ConfigError("--samples must be >= 1")
    bench = BenchmarkConfig(
        k=cfg.denoise.k, steps=cfg.diffusion.T, schedule=cfg.diffusion.schedule_kind,
        seeds=args.seeds or (cfg.seed,), num_samples=args.samples, pseudocount=cfg.denoise.pseudocount,
        blend_weight=cfg.denoise.blend_weight, stochastic_final=cfg.diffusion.stochastic_final,
        threads=cfg.threads,
    )
    report = run_benchmark(db, queries, bench)
    _write(format_report(report), args.out)
    log.info("evaluated %d queries (%d skipped); mean graft AAR %s, mean diffusion AAR %s",
             len(queries), len(report.skipped), report.mean_graft_aar, report.mean_diffusion_aar)
    if args.k_sweep:
        table = k_sweep(db, queries, bench, args.k_sweep)
        _write(format_k_table(table), args.sweep_out)
    return EXIT_OK


HANDLERS = {
    "build-db": cmd_build_db,
    "query": cmd_query,
    "graft": cmd_graft,
    "sample": cmd_sample,
    "export-msa": cmd_export_msa,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    _setup_logging(args.log_level)
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    try:
        cfg = _resolve(args)
        return HANDLERS[args.command](args, cfg)
    except (ConfigError, UsageError, SpanError, DomainError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except ContractError as exc:
        log.error("contract violation: %s", exc)
        return EXIT_CONTRACT
    except (DataError, ShapeError, FileNotFoundError, UnicodeDecodeError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
