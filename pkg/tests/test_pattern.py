import random
from itertools import permutations

import pytest

from retrobio.molgraph import (
    Atom,
    Bond,
    DOUBLE,
    MolecularGraph,
    SINGLE,
    VALENCES,
    add_explicit_hydrogens,
    canonicalize,
    lowest_feasible_valence,
    parse_smiles,
)
from retrobio.pattern import (
    DuplicateMapIndexOnSide,
    MissingArrow,
    PatternAtom,
    PatternGraph,
    TemplateError,
    UnmappedRewriteReference,
    apply_template,
    enumerate_precursors,
    find_matches,
    load_templates,
    parse_smarts,
    parse_smarts_template,
)

# The two reconstruction templates: a reaction-center-only rewrite (three
# carbons, one hydrogen) and the same rewrite constrained by every
# distance-1 neighbour. Applied to 3,3-dimethyloctan-1-ol they give 15 and
# 2 distinct precursor sets, with 48 raw matches for the constrained one.
LOOSE_SMARTS = "[C:1]([H:2])[C:3][C:4]>>[C:1]=[C:3].[C:4][H:2]"
TIGHT_SMARTS = (
    "[*:8][C:1]([H:10])([H:11])[C:2]([H:4])([H:9])[C:3]([C:5])([C:6])[C:7]"
    ">>[*:8][C:1]([H:11])=[C:2]([H:4])[H:9].[C:3]([C:5])([C:6])([C:7])[H:10]"
)
PRODUCT_FIXTURE = "OCCC(C)(C)CCCCC"


def brute_force_matches(pattern: PatternGraph, target: MolecularGraph):
    """Exhaustive injective assignment enumeration; the matcher oracle."""
    n = len(pattern.atoms)
    orders = {(b.a, b.b): b.order for b in target.bonds}
    found = []
    for perm in permutations(range(len(target.atoms)), n):
        ok = all(pattern.atoms[i].matches(target, perm[i]) for i in range(n))
        if ok:
            for bond in pattern.bonds:
                lo, hi = sorted((perm[bond.a], perm[bond.b]))
                order = orders.get((lo, hi))
                if order is None or not bond.matches(order):
                    ok = False
                    break
        if ok:
            found.append(tuple(perm))
    return sorted(found)


def random_molecule(rng: random.Random, max_atoms: int = 10) -> MolecularGraph:
    """Random valence-respecting connected graph over C/N/O."""
    n = rng.randint(1, max_atoms)
    elements = [rng.choice("CCCNO") for _ in range(n)]
    free = [max(VALENCES[e]) for e in elements]
    bonds = []
    for i in range(1, n):
        j = rng.randrange(i)
        if free[i] >= 1 and free[j] >= 1:
            order = DOUBLE if (rng.random() < 0.2 and free[i] > 1 and free[j] > 1) else SINGLE
            k = 2 if order == DOUBLE else 1
            bonds.append(Bond(j, i, order))
            free[i] -= k
            free[j] -= k
    atoms = []
    for i, element in enumerate(elements):
        used = sum(
            2 if b.order == DOUBLE else 1 for b in bonds if i in (b.a, b.b)
        )
        hydrogens = lowest_feasible_valence(element, used) - used
        atoms.append(Atom(element, hydrogens=hydrogens))
    return MolecularGraph(tuple(atoms), tuple(bonds))


def random_pattern(rng: random.Random, max_atoms: int = 4) -> PatternGraph:
    """Random small chain/star pattern with random constraint subsets."""
    n = rng.randint(1, max_atoms)
    atoms = []
    for _ in range(n):
        atoms.append(
            PatternAtom(
                element=rng.choice([None, "C", "C", "N", "O"]),
                aromatic=rng.choice([None, False]),
                h_count=rng.choice([None, None, None, 0, 1, 2, 3]),
                degree=rng.choice([None, None, None, 1, 2]),
            )
        )
    bonds = []
    for i in range(1, n):
        j = rng.randrange(i) if rng.random() < 0.7 else i - 1
        order = rng.choice([None, None, SINGLE, DOUBLE])
        bonds.append((min(i, j), max(i, j), order))
    unique = {}
    for a, b, order in bonds:
        unique[(a, b)] = order
    from retrobio.pattern import PatternBond

    return PatternGraph(
        tuple(atoms), tuple(PatternBond(a, b, o) for (a, b), o in unique.items())
    )


class TestParseTemplate:
    def test_minimal_mapped_template(self):
        t = parse_smarts_template("[CH3:1][OH:2]>>[CH3:1][O-:2]")
        assert len(t.lhs.atoms) == 2
        assert len(t.rhs.atoms) == 2
        assert len(t.mapping) == 2

    def test_reaction_center_template_has_4_pairs(self):
        assert len(parse_smarts_template(LOOSE_SMARTS).mapping) == 4

    def test_neighbourhood_template_has_11_pairs(self):
        assert len(parse_smarts_template(TIGHT_SMARTS).mapping) == 11

    def test_missing_arrow(self):
        with pytest.raises(MissingArrow):
            parse_smarts_template("[C:1][C:2]")
        with pytest.raises(MissingArrow):
            parse_smarts_template("[C:1]>>[C:1]>>[C:1]")

    def test_duplicate_map_index_on_side(self):
        with pytest.raises(DuplicateMapIndexOnSide):
            parse_smarts_template("[C:1][C:1]>>[C:1][C:1]")

    def test_unmapped_rewrite_reference(self):
        with pytest.raises(UnmappedRewriteReference):
            parse_smarts_template("[C:1]>>[C:2]")
        with pytest.raises(UnmappedRewriteReference):
            parse_smarts_template("[C:1][C:2]>>[C:1]")

    def test_fresh_rhs_atom_needs_element(self):
        with pytest.raises(ValueError):
            parse_smarts_template("[C:1]>>[C:1]*")

    def test_wildcard_and_constraints(self):
        p = parse_smarts("[*:1][CH2D2:2]")
        assert p.atoms[0].element is None
        assert p.atoms[1].h_count == 2
        assert p.atoms[1].degree == 2


class TestFindMatches:
    def test_single_carbon_vs_ethane(self):
        assert len(find_matches(parse_smarts("C"), parse_smiles("CC"))) == 2

    def test_aliphatic_pattern_vs_benzene(self):
        assert find_matches(parse_smarts("CC"), parse_smiles("c1ccccc1")) == []

    def test_interchangeable_hydrogens_multiply_matches(self):
        # two mapped H constraints on one carbon: every match comes in pairs
        pattern = parse_smarts("[O:1][C:2]([H:3])[H:4]")
        target = add_explicit_hydrogens(parse_smiles("OCC"))
        matches = find_matches(pattern, target)
        assert matches and len(matches) % 2 == 0

    def test_results_sorted_lexicographically(self):
        matches = find_matches(parse_smarts("CC"), parse_smiles("CCC"))
        assert matches == sorted(matches)

    def test_oracle_equivalence_200_random_pairs(self):
        rng = random.Random(1127)
        for _ in range(200):
            target = random_molecule(rng)
            pattern = random_pattern(rng)
            assert find_matches(pattern, target) == brute_force_matches(
                pattern, target
            )


class TestApplyTemplate:
    def test_loose_template_15_outcomes(self):
        template = parse_smarts_template(LOOSE_SMARTS, template_id="loose")
        apps = apply_template(template, parse_smiles(PRODUCT_FIXTURE))
        assert len(apps) == 15

    def test_tight_template_2_outcomes_48_raw_matches(self):
        template = parse_smarts_template(TIGHT_SMARTS, template_id="tight")
        work = add_explicit_hydrogens(parse_smiles(PRODUCT_FIXTURE))
        assert len(find_matches(template.lhs, work)) == 48
        apps = apply_template(template, parse_smiles(PRODUCT_FIXTURE))
        assert len(apps) == 2

    def test_tight_outcomes_subset_of_loose(self):
        loose = parse_smarts_template(LOOSE_SMARTS)
        tight = parse_smarts_template(TIGHT_SMARTS)
        target = parse_smiles(PRODUCT_FIXTURE)
        loose_keys = {a.precursor_keys for a in apply_template(loose, target)}
        tight_keys = {a.precursor_keys for a in apply_template(tight, target)}
        assert tight_keys < loose_keys

    def test_identity_template_on_methane(self):
        template = parse_smarts_template("[C:1]>>[C:1]")
        apps = apply_template(template, parse_smiles("C"))
        assert [a.precursor_keys for a in apps] == [("C",)]

    def test_alcohol_to_aldehyde(self):
        template = parse_smarts_template(
            "[C:1]([H])([H:2])[O:3][H]>>[C:1]([H:2])=[O:3]"
        )
        apps = apply_template(template, parse_smiles("OCCCCO"))
        assert [a.precursor_keys for a in apps] == [
            (canonicalize(parse_smiles("O=CCCCO")),)
        ]

    def test_outcomes_reparse_and_pass_valence(self):
        template = parse_smarts_template(LOOSE_SMARTS)
        for app in apply_template(template, parse_smiles(PRODUCT_FIXTURE)):
            for key in app.precursor_keys:
                mol = parse_smiles(key)  # re-parses cleanly
                add_explicit_hydrogens(mol)  # would raise on bad valence

    def test_no_duplicate_outcome_keys(self):
        template = parse_smarts_template(LOOSE_SMARTS)
        apps = apply_template(template, parse_smiles(PRODUCT_FIXTURE))
        keys = [a.precursor_keys for a in apps]
        assert len(keys) == len(set(keys))

    def test_element_rewrite(self):
        template = parse_smarts_template("[C:1][O:2]>>[C:1][S:2]")
        apps = apply_template(template, parse_smiles("CCO"))
        assert [a.precursor_keys for a in apps] == [("CCS",)]

    def test_deleted_atom_rehydrogenates_mapped_neighbour(self):
        template = parse_smarts_template("[C:1][O]>>[C:1]")
        apps = apply_template(template, parse_smiles("CCO"))
        assert [a.precursor_keys for a in apps] == [("CC",)]

    def test_deleted_atom_rehydrogenates_spectator_neighbour(self):
        template = parse_smarts_template("[O:1][C]>>[O:1]")
        apps = apply_template(template, parse_smiles("CCO"))
        assert [a.precursor_keys for a in apps] == [("C", "O")]

    def test_aromatic_ring_cut_fails_sanitization(self):
        template = parse_smarts_template("[c:1][c:2]>>[c:1].[c:2]")
        assert apply_template(template, parse_smiles("c1ccccc1")) == []

    def test_bond_order_change(self):
        template = parse_smarts_template("[C:1]=[O:2]>>[C:1][O:2]")
        apps = apply_template(template, parse_smiles("CC(=O)C"))
        assert [a.precursor_keys for a in apps] == [("CC(C)O",)]

    def test_charge_rewrite(self):
        template = parse_smarts_template("[CH3:1][OH:2]>>[CH3:1][O-:2]")
        apps = apply_template(template, parse_smiles("CO"))
        assert [a.precursor_keys for a in apps] == [("C[O-]",)]

    def test_monotonic_specificity(self):
        # Adding a constraint to a pattern atom never increases matches.
        rng = random.Random(5)
        for _ in range(50):
            target = random_molecule(rng)
            pattern = random_pattern(rng, max_atoms=3)
            base = len(find_matches(pattern, target))
            idx = rng.randrange(len(pattern.atoms))
            before = pattern.atoms[idx]
            if before.h_count is None:
                import dataclasses

                constrained = dataclasses.replace(before, h_count=1)
                atoms = list(pattern.atoms)
                atoms[idx] = constrained
                tighter = PatternGraph(tuple(atoms), pattern.bonds)
                assert len(find_matches(tighter, target)) <= base


class TestEnumeratePrecursors:
    def test_empty_template_list(self):
        assert enumerate_precursors(parse_smiles("CCO"), []) == []

    def test_redundant_templates_merge_provenance(self):
        t1 = parse_smarts_template(
            "[C:1]([H])([H:2])[O:3][H]>>[C:1]([H:2])=[O:3]",
            template_id="A",
            ec_numbers=("1.1.1.1",),
        )
        t2 = parse_smarts_template(
            "[O:3]([H])[C:1]([H])[H:2]>>[C:1]([H:2])=[O:3]",
            template_id="B",
            ec_numbers=("1.1.1.2",),
        )
        candidates = enumerate_precursors(parse_smiles("CCO"), [t1, t2])
        assert len(candidates) == 1
        assert candidates[0].provenance == (
            ("A", ("1.1.1.1",)),
            ("B", ("1.1.1.2",)),
        )

    def test_bdo_yields_hydroxybutyraldehyde(self, synth_corpus):
        _, templates, _, _ = synth_corpus
        candidates = enumerate_precursors(parse_smiles("OCCCCO"), templates)
        expected = canonicalize(parse_smiles("O=CCCCO"))
        assert any(c.precursor_keys == (expected,) for c in candidates)

    def test_no_two_candidates_share_key(self, synth_corpus):
        _, templates, _, _ = synth_corpus
        candidates = enumerate_precursors(parse_smiles("OCCCC(C)CO"), templates)
        keys = [c.precursor_keys for c in candidates]
        assert len(keys) == len(set(keys))

    def test_worker_count_does_not_change_output(self, synth_corpus):
        _, templates, _, _ = synth_corpus
        target = parse_smiles("OCCCCC")
        assert enumerate_precursors(target, templates, 1) == enumerate_precursors(
            target, templates, 4
        )


class TestTemplateFile:
    def test_load_round_trip(self, tmp_path):
        path = tmp_path / "templates.tsv"
        path.write_text(
            "# template_id\tdirection\tdiameter\tec_numbers\tsmarts\n"
            f"T01\tbwd\t2\t1.1.1.-;1.1.1.1\t{LOOSE_SMARTS}\n",
            encoding="utf-8",
        )
        (template,) = load_templates(path)
        assert template.template_id == "T01"
        assert template.direction == "bwd"
        assert template.diameter == 2
        assert template.ec_numbers == ("1.1.1.-", "1.1.1.1")
        assert len(template.mapping) == 4

    def test_bad_direction_rejected(self, tmp_path):
        path = tmp_path / "templates.tsv"
        path.write_text("T01\tsideways\t2\t-\t[C:1]>>[C:1]\n", encoding="utf-8")
        with pytest.raises(TemplateError):
            load_templates(path)
