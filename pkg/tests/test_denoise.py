import numpy as np
import pytest

from fragdiff.denoise import (FragmentSequenceMatrix, build_profile, build_pseudo_msa, export_msa, format_msa,
                              graft_top1, profile_denoise, read_fasta)
from fragdiff.diffusion import AA_INDEX, K, CategoricalSequenceState
from fragdiff.errors import NoDataError, ShapeError
from fragdiff.retrieval import FragmentMatch


def frag(seq, rmsd, src="s", start=0):
    return FragmentMatch(src, "A", start, len(seq), rmsd, seq)


def state(m, t=10):
    return CategoricalSequenceState(t, np.full((m, K), 1 / K))


def test_tiny_pseudocount_near_onehot():
    p = build_profile([frag("ACDEF", 0.1)], k=1, pseudocount=1e-9)
    for j, a in enumerate("ACDEF"):
        assert p.pssm[j, AA_INDEX[a]] > 1 - 1e-7


def test_two_rows_worked_example():
    p = build_profile([frag("AA", 0.1), frag("CA", 0.2)], k=2, pseudocount=0.1)
    # column 0: one A, one C; column 1: two A
    assert p.pssm[0, AA_INDEX["A"]] == pytest.approx(1.1 / 4, abs=1e-15)
    assert p.pssm[0, AA_INDEX["C"]] == pytest.approx(1.1 / 4, abs=1e-15)
    assert p.pssm[1, AA_INDEX["A"]] == pytest.approx(2.1 / 4, abs=1e-15)
    assert p.pssm[1, AA_INDEX["A"]] == pytest.approx(0.525, abs=1e-15)
    assert p.pssm[1, AA_INDEX["W"]] == pytest.approx(0.025, abs=1e-15)
    np.testing.assert_allclose(p.pssm.sum(axis=1), 1.0, atol=1e-15)


def test_twenty_identical_rows():
    p = build_profile([frag("GGG", 0.01 * i, start=i) for i in range(20)], k=20, pseudocount=0.1)
    assert p.k_used == 20
    np.testing.assert_allclose(p.pssm[:, AA_INDEX["G"]], 20.1 / 22, atol=1e-15)
    assert p.pssm[0, AA_INDEX["A"]] == pytest.approx(0.1 / 22, abs=1e-15)


def test_profile_strictly_positive_and_k_truncates():
    rng = np.random.default_rng(0)
    matches = [frag("".join(rng.choice(list("ACDEFGHIKLMNPQRSTVWY"), 6)), float(r), start=i)
               for i, r in enumerate(rng.uniform(0, 1, 40))]
    p = build_profile(matches, k=15)
    assert p.k_used == 15
    assert (p.pssm > 0).all()


def test_profile_skips_wrong_length_and_unknown():
    matches = [frag("ACDE", 0.1), frag("ACD", 0.05), frag("AXDE", 0.02)]
    p = build_profile(matches, k=15, m=4)
    assert p.k_used == 1 and p.skipped == 2
    with pytest.raises(NoDataError):
        build_profile([frag("AXD", 0.1)], m=3)
    with pytest.raises(NoDataError):
        build_profile([])


def test_blend_weights():
    p = build_profile([frag("AA", 0.1), frag("CA", 0.2)], k=2, pseudocount=0.1)
    np.testing.assert_allclose(profile_denoise(state(2), p).s0_probs, p.pssm, rtol=0, atol=1e-15)
    zero = build_profile([frag("AA", 0.1), frag("CA", 0.2)], k=2, blend_weight=0.0)
    np.testing.assert_allclose(zero(state(2)).s0_probs, 1 / K, atol=1e-15)
    onehot_prior = np.zeros((2, K))
    onehot_prior[:, AA_INDEX["A"]] = 1
    half = build_profile([frag("CC", 0.1)], k=1, pseudocount=1e-12, context_prior=onehot_prior, blend_weight=0.5)
    out = half(state(2)).s0_probs
    assert out[0, AA_INDEX["A"]] == pytest.approx(0.5, abs=1e-9)
    assert out[0, AA_INDEX["C"]] == pytest.approx(0.5, abs=1e-9)


def test_profile_shape_mismatch():
    p = build_profile([frag("AAAA", 0.1)])
    with pytest.raises(ShapeError):
        p(state(3))


def test_profile_monotone_in_rank():
    # adding a lower-ranked fragment cannot change which fragments the top-k uses
    base = [frag("AAAA", 0.1, start=0), frag("CCCC", 0.2, start=1)]
    p1 = build_profile(base, k=2)
    p2 = build_profile(base + [frag("WWWW", 0.9, start=2)], k=2)
    np.testing.assert_array_equal(p1.pssm, p2.pssm)
    p3 = build_profile(base + [frag("WWWW", 0.05, start=2)], k=2)
    assert p3.pssm[0, AA_INDEX["W"]] > p1.pssm[0, AA_INDEX["W"]]


def test_graft_top1():
    assert graft_top1([frag("CCCC", 0.3), frag("AAAA", 0.1)], 4) == "AAAA"
    # ties resolved by rank order (source id first)
    assert graft_top1([frag("DDDD", 0.1, src="b"), frag("EEEE", 0.1, src="a")], 4) == "EEEE"
    assert graft_top1([frag("AXAA", 0.05), frag("GGGG", 0.2)], 4) == "GGGG"
    with pytest.raises(NoDataError):
        graft_top1([], 4)
    with pytest.raises(NoDataError):
        graft_top1([frag("AAA", 0.1)], 4)


def test_fragment_matrix_order():
    mat = FragmentSequenceMatrix.from_matches([frag("CCC", 0.3), frag("AAA", 0.1), frag("DDD", 0.2)], 2, 3)
    assert mat.rows == ("AAA", "DDD")
    assert mat.rmsds == (0.1, 0.2)


def test_pseudo_msa_rows():
    mat = FragmentSequenceMatrix(("AAA", "CCC"), (0.25, 0.5))
    msa = build_pseudo_msa("KL???MN", "WWW", mat)
    assert msa.rows == ("KLWWWMN", "KLAAAMN", "KLCCCMN")
    assert msa.span == (2, 3)
    text = format_msa(msa)
    assert text.splitlines()[0] == ">row_0_query"
    assert ">row_1_frag rmsd=0.250000" in text


def test_pseudo_msa_no_fragments():
    msa = build_pseudo_msa("??", "AC")
    assert msa.rows == ("AC",)


@pytest.mark.parametrize("framework,noisy", [("KLMN", "A"), ("K?L?", "AA"), ("K??L", "AAA")])
def test_pseudo_msa_errors(framework, noisy):
    with pytest.raises(ShapeError):
        build_pseudo_msa(framework, noisy)


def test_export_round_trip(tmp_path):
    mat = FragmentSequenceMatrix(("AAA", "CCC"), (0.25, 0.123456789))
    msa = build_pseudo_msa("KL???MN", "WWW", mat)
    path = tmp_path / "m.fasta"
    export_msa(msa, path)
    records = read_fasta(path)
    assert [seq for _, seq in records] == list(msa.rows)
    assert records[2][0] == "row_2_frag rmsd=0.123457"
    assert path.read_bytes() == format_msa(msa).encode()
