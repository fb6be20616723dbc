"""Builds an on-disk corpus, queries TSV and labels TSV for CLI-level tests."""

from pathlib import Path

from fragdiff.synthetic import family_corpus


def family_workspace(root: Path, seed: int = 0, exact_copy: bool = False, n_decoys: int = 50):
    fam = family_corpus(seed=seed, n_decoys=n_decoys, exact_copy=exact_copy)
    fam.write(root / "corpus")
    (root / "queries.tsv").write_text(
        "query_id\tpdb\tchain\tstart\tlength\n"
        f"q1\tcorpus/query.pdb\t{fam.query_chain}\t{fam.query_start}\t{fam.motif_len}\n")
    (root / "labels.tsv").write_text(f"query_id\ttrue_sequence\nq1\t{fam.modal}\n")
    return fam
