import random

import pytest

from retrobio.molgraph import (
    AROMATIC,
    Atom,
    Bond,
    DOUBLE,
    EmptyInput,
    MalformedBracketAtom,
    MolecularGraph,
    SINGLE,
    SmilesSyntaxError,
    UnbalancedRingClosure,
    UnknownElement,
    ValenceExceeded,
    add_explicit_hydrogens,
    canonicalize,
    parse_smiles,
    remove_explicit_hydrogens,
    write_smiles,
)

from conftest import permute_graph

FIXTURES = [
    "CCO",
    "c1ccccc1",
    "C1=CC=CC=C1",
    "CC(C)C(=O)O",
    "c1ccc(cc1)C(=O)O",
    "C1CC1.CC",
    "OCC1CCCCC1O",
    "CC(C)(C)c1ccccc1",
    "[NH4+].[O-]S(=O)(=O)[O-].[NH4+]",
    "OCCC(C)(C)CCCCC",
    "C[N+](C)(C)C",
    "N#Cc1ccccc1",
]


class TestParse:
    def test_simple_chain(self):
        mol = parse_smiles("CCO")
        assert [a.element for a in mol.atoms] == ["C", "C", "O"]
        assert all(b.order == SINGLE for b in mol.bonds)
        assert [a.hydrogens for a in mol.atoms] == [3, 2, 1]

    def test_aromatic_benzene(self):
        mol = parse_smiles("c1ccccc1")
        assert len(mol.atoms) == 6
        assert all(a.aromatic for a in mol.atoms)
        assert all(b.order == AROMATIC for b in mol.bonds)
        assert all(a.hydrogens == 1 for a in mol.atoms)

    def test_kekule_not_aromatized(self):
        mol = parse_smiles("C1=CC=CC=C1")
        assert not any(a.aromatic for a in mol.atoms)
        orders = sorted(b.order for b in mol.bonds)
        assert orders == [DOUBLE] * 3 + [SINGLE] * 3
        assert canonicalize(mol) != canonicalize(parse_smiles("c1ccccc1"))

    def test_bracket_atom_properties(self):
        mol = parse_smiles("[CH3:1][O-:2]")
        c, o = mol.atoms
        assert (c.hydrogens, c.map_index) == (3, 1)
        assert (o.charge, o.map_index, o.hydrogens) == (-1, 2, 0)

    def test_components_via_dot(self):
        mol = parse_smiles("CC.O")
        assert len(mol.components()) == 2

    def test_biphenyl_connecting_bond_is_single(self):
        mol = parse_smiles("c1ccccc1-c1ccccc1")
        singles = [b for b in mol.bonds if b.order == SINGLE]
        assert len(singles) == 1

    @pytest.mark.parametrize(
        "text,exc",
        [
            ("", EmptyInput),
            ("C1CC", UnbalancedRingClosure),
            ("C%1CC", UnbalancedRingClosure),
            ("CQ", UnknownElement),
            ("C[Zz]C", UnknownElement),
            ("C[C", MalformedBracketAtom),
            ("C[]", MalformedBracketAtom),
            ("C[CH3:0]", MalformedBracketAtom),
            ("C((C))", SmilesSyntaxError),
            ("cc", SmilesSyntaxError),
            ("C=#C", SmilesSyntaxError),
        ],
    )
    def test_errors_carry_offsets(self, text, exc):
        with pytest.raises(exc) as excinfo:
            parse_smiles(text)
        assert excinfo.value.offset >= 0

    def test_valence_exceeded_at_parse(self):
        with pytest.raises(ValenceExceeded):
            parse_smiles("C(=O)(=O)(=O)=O")

    def test_lowercase_heteroatom_needs_ring(self):
        with pytest.raises(SmilesSyntaxError):
            parse_smiles("co")

    def test_multivalent_sulfur(self):
        assert parse_smiles("S").atoms[0].hydrogens == 2
        mol = parse_smiles("OS(=O)(=O)O")
        assert mol.atoms[1].hydrogens == 0


class TestWrite:
    @pytest.mark.parametrize("fixture", FIXTURES)
    def test_round_trip_isomorphic(self, fixture):
        mol = parse_smiles(fixture)
        again = parse_smiles(write_smiles(mol))
        assert canonicalize(again) == canonicalize(mol)

    def test_single_carbon(self):
        assert write_smiles(parse_smiles("C")) == "C"

    def test_two_components_write_one_dot(self):
        text = write_smiles(parse_smiles("CCO.CC"))
        assert text.count(".") == 1
        assert len(parse_smiles(text).components()) == 2

    def test_map_indices_preserved(self):
        assert write_smiles(parse_smiles("[CH3:1][OH:2]")) == "[CH3:1][OH:2]"


class TestCanonicalize:
    def test_same_molecule_different_traversal(self):
        assert canonicalize(parse_smiles("OCC")) == canonicalize(parse_smiles("CCO"))

    def test_methane_stable(self):
        assert canonicalize(parse_smiles("C")) == "C"

    def test_idempotent_on_own_output(self):
        for fixture in FIXTURES:
            canonical = canonicalize(parse_smiles(fixture))
            assert canonicalize(parse_smiles(canonical)) == canonical

    def test_1000_permutations_of_12_atom_fixture(self):
        rng = random.Random(20240901)
        mol = parse_smiles("OCC(N)C(=O)c1ccccc1")
        assert len(mol.atoms) == 12
        forms = {canonicalize(permute_graph(mol, rng)) for _ in range(1000)}
        assert len(forms) == 1

    @pytest.mark.parametrize("fixture", FIXTURES)
    def test_100_permutations_each_fixture(self, fixture):
        rng = random.Random(hash(fixture) & 0xFFFF)
        mol = parse_smiles(fixture)
        reference = canonicalize(mol)
        for _ in range(100):
            assert canonicalize(permute_graph(mol, rng)) == reference

    def test_strips_map_indices(self):
        assert canonicalize(parse_smiles("[CH3:1][OH:2]")) == "CO"


class TestHydrogens:
    def test_methane_gains_four(self):
        mol = add_explicit_hydrogens(parse_smiles("C"))
        assert sum(1 for a in mol.atoms if a.element == "H") == 4
        assert len(mol.atoms) == 5

    def test_water_gains_two(self):
        mol = add_explicit_hydrogens(parse_smiles("O"))
        assert sum(1 for a in mol.atoms if a.element == "H") == 2

    def test_formaldehyde_valence_arithmetic(self):
        mol = parse_smiles("C=O")
        assert [a.hydrogens for a in mol.atoms] == [2, 0]
        expanded = add_explicit_hydrogens(mol)
        assert sum(1 for a in expanded.atoms if a.element == "H") == 2

    @pytest.mark.parametrize("fixture", FIXTURES)
    def test_idempotent(self, fixture):
        once = add_explicit_hydrogens(parse_smiles(fixture))
        assert add_explicit_hydrogens(once) == once

    @pytest.mark.parametrize("fixture", FIXTURES)
    def test_remove_is_inverse(self, fixture):
        mol = parse_smiles(fixture)
        assert canonicalize(remove_explicit_hydrogens(add_explicit_hydrogens(mol))) == canonicalize(mol)

    def test_molecular_hydrogen_kept(self):
        mol = parse_smiles("[H][H]")
        assert remove_explicit_hydrogens(mol) == mol

    def test_valence_exceeded(self):
        bad = MolecularGraph(
            (Atom("C"), Atom("O"), Atom("O"), Atom("O")),
            (Bond(0, 1, DOUBLE), Bond(0, 2, DOUBLE), Bond(0, 3, DOUBLE)),
        )
        with pytest.raises(ValenceExceeded):
            add_explicit_hydrogens(bad)


class TestGraphInvariants:
    def test_zero_atom_graph_invalid(self):
        with pytest.raises(ValueError):
            MolecularGraph((), ())

    def test_no_self_loops(self):
        with pytest.raises(ValueError):
            Bond(2, 2)

    def test_no_parallel_bonds(self):
        with pytest.raises(ValueError):
            MolecularGraph(
                (Atom("C"), Atom("C")), (Bond(0, 1), Bond(1, 0, DOUBLE))
            )

    @pytest.mark.parametrize("fixture", FIXTURES)
    def test_aromatic_atoms_always_cyclic(self, fixture):
        mol = parse_smiles(fixture)
        ring_atoms = {i for pair in mol.ring_bonds() for i in pair}
        for idx, atom in enumerate(mol.atoms):
            if atom.aromatic:
                assert idx in ring_atoms
