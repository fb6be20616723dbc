import logging

import numpy as np
import pytest

from fragdiff.errors import EmptyStructureError, ParseError, SpanError
from fragdiff.structmodel import (CdrSpan, MotifQuery, extract_motif, format_pdb, framework_sequence,
                                  make_structure, parse_backbone)
from fragdiff.synthetic import ca_walk


def atom(serial, name, resname, chain, resseq, x, y, z, occ=1.0, altloc=" ", icode=" ", record="ATOM  "):
    return (f"{record}{serial:5d} {name:<4s}{altloc}{resname:>3s} {chain}{resseq:4d}{icode}   "
            f"{x:8.3f}{y:8.3f}{z:8.3f}{occ:6.2f}{20.0:6.2f}           C")


FIVE_CA = "\n".join(
    atom(i, " CA", res, "A", i, 3.8 * i, 0.5 * i, -1.25 * i)
    for i, res in enumerate(["ALA", "GLY", "TRP", "LYS", "SER"], start=1)
) + "\nEND\n"


def test_single_chain_five_residues():
    s = parse_backbone(FIVE_CA.encode(), structure_id="t1")
    assert list(s.chains) == ["A"]
    chain = s.chains["A"]
    assert len(chain) == 5
    assert chain.sequence == "AGWKS"
    assert [r.seq_number for r in chain.residues] == [1, 2, 3, 4, 5]
    assert chain.residues[2].ca_coord == (11.4, 1.5, -3.75)


def test_only_hetatm_is_empty():
    text = "\n".join(atom(i, " CA", "HOH", "A", i, 0, 0, i, record="HETATM") for i in range(1, 4))
    with pytest.raises(EmptyStructureError):
        parse_backbone(text)


def test_altloc_highest_occupancy_wins():
    lines = [
        atom(1, " CA", "ALA", "A", 1, 0, 0, 0),
        atom(2, " CA", "SER", "A", 2, 1.0, 2.0, 3.0, occ=0.6, altloc="A"),
        atom(3, " CA", "SER", "A", 2, 9.0, 9.0, 9.0, occ=0.4, altloc="B"),
    ]
    s = parse_backbone("\n".join(lines))
    assert s.chains["A"].residues[1].ca_coord == (1.0, 2.0, 3.0)
    assert len(s.chains["A"]) == 2

    # tie on occupancy: first record wins; a later higher occupancy replaces it
    lines[2] = atom(3, " CA", "SER", "A", 2, 9.0, 9.0, 9.0, occ=0.6, altloc="B")
    assert parse_backbone("\n".join(lines)).chains["A"].residues[1].ca_coord == (1.0, 2.0, 3.0)
    lines[2] = atom(3, " CA", "SER", "A", 2, 9.0, 9.0, 9.0, occ=0.7, altloc="B")
    assert parse_backbone("\n".join(lines)).chains["A"].residues[1].ca_coord == (9.0, 9.0, 9.0)


def test_residue_without_ca_dropped_and_other_atoms_ignored():
    lines = [
        atom(1, " N", "ALA", "A", 1, 0, 0, 0),
        atom(2, " CA", "ALA", "A", 1, 1, 0, 0),
        atom(3, " N", "GLY", "A", 2, 2, 0, 0),
        atom(4, " CA", "UNK", "A", 3, 3, 0, 0),
    ]
    chain = parse_backbone("\n".join(lines)).chains["A"]
    assert chain.sequence == "AX"
    assert [r.seq_number for r in chain.residues] == [1, 3]


def test_insertion_codes_and_chain_order():
    lines = [
        atom(1, " CA", "ALA", "B", 100, 0, 0, 0),
        atom(2, " CA", "GLY", "B", 100, 3.8, 0, 0, icode="A"),
        atom(3, " CA", "CYS", "A", 1, 0, 5, 0),
    ]
    s = parse_backbone("\n".join(lines))
    assert list(s.chains) == ["B", "A"]
    res = s.chains["B"].residues
    assert (res[0].insertion_code, res[1].insertion_code) == (None, "A")


def test_malformed_atom_line_names_line_number():
    bad = FIVE_CA.splitlines()
    bad[2] = bad[2][:30] + "   xx.yyy" + bad[2][39:]
    with pytest.raises(ParseError, match="line 3"):
        parse_backbone("\n".join(bad))
    with pytest.raises(ParseError, match="line 1"):
        parse_backbone("ATOM      1  CA  ALA A   1\n")


def test_only_first_model_read():
    text = "MODEL        1\n" + FIVE_CA.replace("END\n", "ENDMDL\n") + "MODEL        2\n" + \
        atom(9, " CA", "ALA", "Z", 1, 0, 0, 0) + "\nENDMDL\n"
    assert list(parse_backbone(text).chains) == ["A"]


def _ten_residue():
    rng = np.random.default_rng(0)
    return make_structure("ten", {"A": ("ACDEFGHIKL", ca_walk(10, rng))})


def test_extract_motif_single_span():
    s = _ten_residue()
    q = extract_motif(s, [CdrSpan("A", 3, 5)])
    assert len(q.segments) == 1 and q.total_len == 5
    np.testing.assert_array_equal(q.segments[0], s.chains["A"].coords[3:8])


def test_extract_motif_two_spans():
    s = _ten_residue()
    q = extract_motif(s, [CdrSpan("A", 0, 2), CdrSpan("A", 5, 3)])
    assert q.lengths == (2, 3)
    assert q.total_len == 5


@pytest.mark.parametrize("span", [CdrSpan("A", 3, 0), CdrSpan("A", 8, 3), CdrSpan("A", -1, 2), CdrSpan("Z", 0, 4)])
def test_extract_motif_range_errors(span):
    with pytest.raises(SpanError):
        extract_motif(_ten_residue(), [span])


def test_round_trip_coordinates_bit_exact():
    s = parse_backbone(FIVE_CA)
    q = extract_motif(s, [CdrSpan("A", 0, 5)])
    for line, xyz in zip(FIVE_CA.splitlines(), q.segments[0]):
        expected = (float(line[30:38]), float(line[38:46]), float(line[46:54]))
        assert tuple(xyz) == expected


def test_format_pdb_round_trip():
    rng = np.random.default_rng(4)
    s = make_structure("x", {"A": ("ACDEFG", np.round(ca_walk(6, rng), 3))})
    back = parse_backbone(format_pdb(s), structure_id="x")
    assert back.chains["A"].sequence == "ACDEFG"
    np.testing.assert_array_equal(back.chains["A"].coords, s.chains["A"].coords)


@pytest.mark.parametrize("start,length,expected", [
    (2, 3, "AC???GH"),
    (0, 7, "???????"),
    (0, 1, "?CDEFGH"),
])
def test_framework_sequence(start, length, expected):
    s = make_structure("f", {"A": ("ACDEFGH", np.arange(21.0).reshape(7, 3) * 1.3)})
    out = framework_sequence(s, CdrSpan("A", start, length))
    assert out == expected
    assert len(out) == 7 and out.count("?") == length


def test_motif_requires_four_residues():
    with pytest.raises(ValueError):
        MotifQuery((np.zeros((3, 3)),))


def test_motif_spacing_warning(caplog):
    pts = np.array([[0, 0, 0], [3.8, 0, 0], [7.6, 0, 0], [20, 0, 0]], dtype=float)
    with caplog.at_level(logging.WARNING):
        MotifQuery((pts,))
    assert "spacing" in caplog.text
