"""
Reaction templates: SMARTS-subset patterns, substructure matching and
backward template application.

A template is ``lhs>>rhs`` where the lhs pattern is matched against the
target molecule and the rhs describes the rewrite. Atom-atom map indices
``[C:1]`` pair atoms across the two sides: mapped atoms are kept and
updated, unmapped lhs atoms are deleted, unmapped rhs atoms are created
fresh. Templates that mention explicit hydrogen atoms are applied on the
hydrogen-expanded form of the target and results are reported with
hydrogens folded back into counts.

Matching returns every injective constraint-satisfying assignment,
including permutations of interchangeable atoms; duplicates collapse only
at the result level, via canonical SMILES of the rewritten components.

Supported atomic constraints: element, aromaticity (lowercase/uppercase),
charge, total hydrogen count (``H``/``Hn``), explicit degree (``Dn``) and
the wildcard ``*``. Logical operators, recursive SMARTS and ring queries
are out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from concurrent.futures import ThreadPoolExecutor

from .molgraph import (
    AROMATIC,
    SINGLE,
    Atom,
    Bond,
    MolecularGraph,
    SmilesSyntaxError,
    VALENCES,
    ORDER_VALENCE,
    _ChainParser,
    _parse_bracket_body,
    _parse_plain_atom,
    add_explicit_hydrogens,
    canonicalize,
    implied_hydrogens,
    lowest_feasible_valence,
    remove_explicit_hydrogens,
)

__all__ = [
    "PatternAtom",
    "PatternBond",
    "PatternGraph",
    "ReactionTemplate",
    "CandidatePrecursor",
    "TemplateApplication",
    "TemplateError",
    "MissingArrow",
    "DuplicateMapIndexOnSide",
    "UnmappedRewriteReference",
    "RewriteProducedEmptyGraph",
    "parse_smarts",
    "parse_smarts_template",
    "find_matches",
    "apply_template",
    "enumerate_precursors",
    "load_templates",
]


class TemplateError(ValueError):
    """Invalid reaction template text."""


class MissingArrow(TemplateError):
    pass


class DuplicateMapIndexOnSide(TemplateError):
    pass


class UnmappedRewriteReference(TemplateError):
    pass


class RewriteProducedEmptyGraph(RuntimeError):
    """A rewrite deleted every atom; the template is degenerate."""


@dataclass(frozen=True, slots=True)
class PatternAtom:
    """One pattern atom; ``None`` fields are unconstrained (wildcard)."""

    element: str | None = None
    aromatic: bool | None = None
    charge: int | None = None
    degree: int | None = None
    h_count: int | None = None
    map_index: int | None = None

    def matches(self, mol: MolecularGraph, idx: int) -> bool:
        atom = mol.atoms[idx]
        if self.element is not None and atom.element != self.element:
            return False
        if self.aromatic is not None and atom.aromatic != self.aromatic:
            return False
        if self.charge is not None and atom.charge != self.charge:
            return False
        if self.degree is not None and mol.degree(idx) != self.degree:
            return False
        if self.h_count is not None and mol.total_hydrogens(idx) != self.h_count:
            return False
        return True


@dataclass(frozen=True, slots=True)
class PatternBond:
    """Pattern bond; ``order`` None means "single or aromatic"."""

    a: int
    b: int
    order: str | None = None

    def matches(self, order: str) -> bool:
        if self.order is None:
            return order in (SINGLE, AROMATIC)
        return order == self.order


@dataclass(frozen=True)
class PatternGraph:
    atoms: tuple[PatternAtom, ...]
    bonds: tuple[PatternBond, ...]
    _adjacency: tuple[tuple[tuple[int, "PatternBond"], ...], ...] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self):
        adj: list[list[tuple[int, PatternBond]]] = [[] for _ in self.atoms]
        for bond in self.bonds:
            adj[bond.a].append((bond.b, bond))
            adj[bond.b].append((bond.a, bond))
        object.__setattr__(self, "_adjacency", tuple(tuple(x) for x in adj))

    def neighbors(self, idx: int) -> tuple[tuple[int, PatternBond], ...]:
        return self._adjacency[idx]

    def map_table(self) -> dict[int, int]:
        """map_index -> atom index; raises on duplicates."""
        table: dict[int, int] = {}
        for i, atom in enumerate(self.atoms):
            if atom.map_index is None:
                continue
            if atom.map_index in table:
                raise DuplicateMapIndexOnSide(
                    f"map index {atom.map_index} appears twice on one side"
                )
            table[atom.map_index] = i
        return table

    def mentions_explicit_hydrogen(self) -> bool:
        return any(a.element == "H" for a in self.atoms)


@dataclass(frozen=True)
class ReactionTemplate:
    """A parsed ``lhs>>rhs`` transformation plus catalog metadata.

    ``mapping`` holds (map_index, lhs_atom, rhs_atom) triples; the map-index
    sets of the two sides must coincide (checked at parse time).
    """

    template_id: str
    lhs: PatternGraph
    rhs: PatternGraph
    mapping: tuple[tuple[int, int, int], ...]
    direction: str = "bwd"
    diameter: int = 0
    ec_numbers: tuple[str, ...] = ()
    smarts: str = ""

    @property
    def uses_explicit_hydrogens(self) -> bool:
        return (
            self.lhs.mentions_explicit_hydrogen()
            or self.rhs.mentions_explicit_hydrogen()
        )


@dataclass(frozen=True)
class TemplateApplication:
    """One sanitized outcome of applying a template at one match site."""

    precursors: tuple[MolecularGraph, ...]
    precursor_keys: tuple[str, ...]  # sorted canonical SMILES
    match: tuple[int, ...]


@dataclass(frozen=True)
class CandidatePrecursor:
    """A deduplicated precursor set with full template/EC provenance."""

    precursor_keys: tuple[str, ...]
    provenance: tuple[tuple[str, tuple[str, ...]], ...]  # (template_id, ecs)

    @property
    def template_ids(self) -> tuple[str, ...]:
        return tuple(p[0] for p in self.provenance)


# ---------------------------------------------------------------------------
# Parsing


def _parse_pattern_atom(text: str, pos: int):
    if text[pos] == "*":
        return {
            "element": None,
            "aromatic": None,
            "offset": pos,
            "hydrogens": 0,
            "h_explicit": False,
            "charge": 0,
            "charge_explicit": False,
            "map_index": None,
        }, pos + 1
    if text[pos] == "[":
        out, end = _parse_bracket_body(text, pos, allow_wildcard=True)
        return out, end
    out, end = _parse_plain_atom(text, pos)
    out.update(
        {
            "hydrogens": 0,
            "h_explicit": False,
            "charge": 0,
            "charge_explicit": False,
            "map_index": None,
        }
    )
    return out, end


def parse_smarts(text: str) -> PatternGraph:
    """Parse one side of a template into a PatternGraph."""
    parser = _ChainParser(text, _parse_pattern_atom)
    parser.run()
    atoms = tuple(
        PatternAtom(
            element=info["element"],
            aromatic=info["aromatic"],
            charge=info["charge"] if info["charge_explicit"] else None,
            degree=info.get("degree"),
            h_count=info["hydrogens"] if info["h_explicit"] else None,
            map_index=info["map_index"],
        )
        for info in parser.atoms
    )
    bonds = tuple(PatternBond(a, b, order) for a, b, order in parser.bonds)
    return PatternGraph(atoms, bonds)


def parse_smarts_template(
    text: str,
    template_id: str = "",
    direction: str = "bwd",
    diameter: int = 0,
    ec_numbers: tuple[str, ...] = (),
) -> ReactionTemplate:
    """Parse ``lhs>>rhs`` and build the atom-atom mapping table.

    Raises MissingArrow, DuplicateMapIndexOnSide, UnmappedRewriteReference,
    or a syntax error carrying the byte offset within the offending side.
    """
    pieces = text.split(">>")
    if len(pieces) != 2:
        raise MissingArrow(
            f"template must contain exactly one '>>', found {len(pieces) - 1}"
        )
    lhs = parse_smarts(pieces[0])
    rhs = parse_smarts(pieces[1])
    lhs_table = lhs.map_table()
    rhs_table = rhs.map_table()
    if set(lhs_table) != set(rhs_table):
        only_lhs = sorted(set(lhs_table) - set(rhs_table))
        only_rhs = sorted(set(rhs_table) - set(lhs_table))
        raise UnmappedRewriteReference(
            f"map indices must pair up across '>>': lhs-only {only_lhs}, "
            f"rhs-only {only_rhs}"
        )
    for i, atom in enumerate(rhs.atoms):
        if atom.map_index is None and atom.element is None:
            raise SmilesSyntaxError(
                "unmapped rewrite atom needs a concrete element", 0
            )
    mapping = tuple(
        (m, lhs_table[m], rhs_table[m]) for m in sorted(lhs_table)
    )
    return ReactionTemplate(
        template_id=template_id,
        lhs=lhs,
        rhs=rhs,
        mapping=mapping,
        direction=direction,
        diameter=diameter,
        ec_numbers=tuple(ec_numbers),
        smarts=text,
    )


def load_templates(path) -> list[ReactionTemplate]:
    """Read the template TSV: template_id, direction, diameter, ec_numbers,
    smarts. '#'-prefixed lines are comments."""
    templates = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise TemplateError(
                    f"{path}:{line_no}: expected 5 tab-separated fields, "
                    f"got {len(fields)}"
                )
            template_id, direction, diameter, ecs, smarts = fields
            if direction not in ("fwd", "bwd"):
                raise TemplateError(
                    f"{path}:{line_no}: direction must be fwd|bwd"
                )
            templates.append(
                parse_smarts_template(
                    smarts,
                    template_id=template_id,
                    direction=direction,
                    diameter=int(diameter),
                    ec_numbers=tuple(e for e in ecs.split(";") if e),
                )
            )
    return templates


# ---------------------------------------------------------------------------
# Matching


def _match_order(pattern: PatternGraph, candidates: list[list[int]]) -> list[int]:
    """Pattern-atom processing order: rarest candidate set first, preferring
    atoms adjacent to already-placed ones so bonds prune early."""
    n = len(pattern.atoms)
    remaining = set(range(n))
    order: list[int] = []
    placed: set[int] = set()
    while remaining:
        def key(i: int):
            adjacent = any(j in placed for j, _ in pattern.neighbors(i))
            return (not adjacent if placed else False, len(candidates[i]), i)

        nxt = min(remaining, key=key)
        order.append(nxt)
        placed.add(nxt)
        remaining.remove(nxt)
    return order


def find_matches(
    pattern: PatternGraph, target: MolecularGraph
) -> list[tuple[int, ...]]:
    """All injective assignments of pattern atoms to target atoms.

    Every returned tuple maps pattern atom i to target atom tuple[i], all
    atom constraints hold, and every pattern bond lands on a target bond of
    compatible order. Results are sorted lexicographically, so the output is
    independent of search heuristics.
    """
    n = len(pattern.atoms)
    candidates = [
        [t for t in range(len(target.atoms)) if pattern.atoms[p].matches(target, t)]
        for p in range(n)
    ]
    if any(not c for c in candidates):
        return []
    order = _match_order(pattern, candidates)
    target_bonds = {
        (bond.a, bond.b): bond.order for bond in target.bonds
    }

    def bond_order(u: int, v: int) -> str | None:
        return target_bonds.get((min(u, v), max(u, v)))

    assignment: dict[int, int] = {}
    used: set[int] = set()
    results: list[tuple[int, ...]] = []

    def backtrack(depth: int):
        if depth == n:
            results.append(tuple(assignment[i] for i in range(n)))
            return
        p = order[depth]
        placed_nbrs = [
            (assignment[q], bond)
            for q, bond in pattern.neighbors(p)
            if q in assignment
        ]
        if placed_nbrs:
            first_t, first_bond = placed_nbrs[0]
            pool = [v for v, _ in target.neighbors(first_t)]
        else:
            pool = candidates[p]
        for t in pool:
            if t in used or not pattern.atoms[p].matches(target, t):
                continue
            ok = True
            for q_t, bond in placed_nbrs:
                o = bond_order(t, q_t)
                if o is None or not bond.matches(o):
                    ok = False
                    break
            if not ok:
                continue
            assignment[p] = t
            used.add(t)
            backtrack(depth + 1)
            del assignment[p]
            used.remove(t)

    backtrack(0)
    results.sort()
    return results


# ---------------------------------------------------------------------------
# Rewriting


def _concrete_order(rhs: PatternGraph, bond: PatternBond) -> str:
    """Resolve a rewrite-side bond to a concrete order."""
    if bond.order is not None:
        return bond.order
    if (
        rhs.atoms[bond.a].aromatic is True
        and rhs.atoms[bond.b].aromatic is True
    ):
        return AROMATIC
    return SINGLE


def _sanitize(mol: MolecularGraph) -> bool:
    """Valence check plus structural aromaticity consistency."""
    ring = mol.ring_bonds()
    ring_atoms = {i for pair in ring for i in pair}
    for idx, atom in enumerate(mol.atoms):
        if atom.aromatic and idx not in ring_atoms:
            return False
        if atom.element not in VALENCES:
            continue
        # Explicit H neighbours are already part of the bond sum.
        valence = (
            sum(ORDER_VALENCE[o] for _, o in mol.neighbors(idx)) + atom.hydrogens
        )
        if lowest_feasible_valence(atom.element, valence, atom.charge) is None:
            return False
    for bond in mol.bonds:
        if bond.order == AROMATIC and not (
            mol.atoms[bond.a].aromatic and mol.atoms[bond.b].aromatic
        ):
            return False
    return True


def _rewrite(
    template: ReactionTemplate, work: MolecularGraph, match: tuple[int, ...]
) -> tuple[tuple[MolecularGraph, ...], tuple[str, ...]] | None:
    """Apply the rewrite at one match site.

    Returns (precursor graphs, sorted canonical keys), or None when the
    result fails valence/aromaticity sanitization.
    """
    lhs, rhs = template.lhs, template.rhs
    atoms: list[Atom] = list(work.atoms)
    bonds: dict[tuple[int, int], str] = {
        (b.a, b.b): b.order for b in work.bonds
    }
    mapped_lhs = {l for _, l, _ in template.mapping}
    rhs_to_target: dict[int, int] = {}
    for _, l, r in template.mapping:
        rhs_to_target[r] = match[l]

    # Unmapped lhs atoms delete their matched target atom.
    deleted = {match[i] for i in range(len(lhs.atoms)) if i not in mapped_lhs}

    dirty: set[int] = set()

    def drop_bond(u: int, v: int):
        key = (min(u, v), max(u, v))
        if key in bonds:
            del bonds[key]
            dirty.update(key)

    def set_bond(u: int, v: int, order: str):
        key = (min(u, v), max(u, v))
        if bonds.get(key) != order:
            bonds[key] = order
            dirty.update(key)

    for t in deleted:
        for v, _ in work.neighbors(t):
            drop_bond(t, v)

    # Fresh atoms for unmapped rhs atoms.
    for r, p in enumerate(rhs.atoms):
        if p.map_index is not None:
            continue
        idx = len(atoms)
        atoms.append(
            Atom(
                element=p.element,
                aromatic=bool(p.aromatic),
                hydrogens=p.h_count or 0,
                charge=p.charge or 0,
            )
        )
        rhs_to_target[r] = idx
        if p.h_count is None:
            dirty.add(idx)

    # Property updates on mapped atoms.
    h_fixed: set[int] = set()
    for _, l, r in template.mapping:
        t = match[l]
        p = rhs.atoms[r]
        atom = atoms[t]
        if p.element is not None and p.element != atom.element:
            atom = replace(atom, element=p.element)
        if p.aromatic is not None and p.aromatic != atom.aromatic:
            atom = replace(atom, aromatic=p.aromatic)
        if p.charge is not None and p.charge != atom.charge:
            atom = replace(atom, charge=p.charge)
        if p.h_count is not None:
            atom = replace(atom, hydrogens=p.h_count)
            h_fixed.add(t)
        atoms[t] = atom
        dirty.add(t)

    # lhs bonds between two mapped atoms: deleted unless rhs repeats them.
    rhs_bond_lookup = {
        (min(b.a, b.b), max(b.a, b.b)): b for b in rhs.bonds
    }
    lhs_to_rhs = {l: r for _, l, r in template.mapping}
    for bond in lhs.bonds:
        if bond.a in mapped_lhs and bond.b in mapped_lhs:
            ra, rb = lhs_to_rhs[bond.a], lhs_to_rhs[bond.b]
            if (min(ra, rb), max(ra, rb)) not in rhs_bond_lookup:
                drop_bond(match[bond.a], match[bond.b])

    # rhs bonds, covering order changes, new bonds and fresh-atom bonds.
    for bond in rhs.bonds:
        u = rhs_to_target[bond.a]
        v = rhs_to_target[bond.b]
        set_bond(u, v, _concrete_order(rhs, bond))

    # Recompute stored hydrogens where the environment changed.
    survivors = [i for i in range(len(atoms)) if i not in deleted]
    adjacency: dict[int, list[tuple[int, str]]] = {i: [] for i in survivors}
    for (u, v), order in bonds.items():
        adjacency[u].append((v, order))
        adjacency[v].append((u, order))
    for t in sorted(dirty - deleted):
        if t in h_fixed:
            continue
        atom = atoms[t]
        if atom.element not in VALENCES:
            continue
        bond_valence = sum(ORDER_VALENCE[o] for _, o in adjacency[t])
        h = implied_hydrogens(atom.element, bond_valence, atom.charge)
        if h is None:
            return None  # valence blown; sanitization failure
        atoms[t] = replace(atom, hydrogens=h)

    if not survivors:
        raise RewriteProducedEmptyGraph(
            f"template {template.template_id or template.smarts!r} deleted "
            "every atom of the target"
        )
    remap = {old: new for new, old in enumerate(survivors)}
    try:
        result = MolecularGraph(
            tuple(atoms[i] for i in survivors),
            tuple(
                Bond(remap[u], remap[v], order)
                for (u, v), order in sorted(bonds.items())
            ),
        )
    except ValueError:
        return None

    precursors = []
    keys = []
    for comp in result.components():
        sub = remove_explicit_hydrogens(result.subgraph(comp))
        if not _sanitize(sub):
            return None
        precursors.append(sub)
        keys.append(canonicalize(sub))
    order_idx = sorted(range(len(keys)), key=lambda i: keys[i])
    return (
        tuple(precursors[i] for i in order_idx),
        tuple(keys[i] for i in order_idx),
    )


def apply_template(
    template: ReactionTemplate, target: MolecularGraph
) -> list[TemplateApplication]:
    """Apply a template at every match site and deduplicate outcomes.

    The target is hydrogen-expanded first when the template mentions
    explicit hydrogens. Results failing sanitization are dropped; distinct
    outcomes are keyed by the multiset of component canonical SMILES, and
    the first match (in deterministic match order) wins.
    """
    work = (
        add_explicit_hydrogens(target)
        if template.uses_explicit_hydrogens
        else target
    )
    out: list[TemplateApplication] = []
    seen: set[tuple[str, ...]] = set()
    for match in find_matches(template.lhs, work):
        rewritten = _rewrite(template, work, match)
        if rewritten is None:
            continue
        precursors, keys = rewritten
        if keys in seen:
            continue
        seen.add(keys)
        out.append(TemplateApplication(precursors, keys, match))
    return out


def _apply_one(args):
    template, target = args
    try:
        applications = apply_template(template, target)
    except RewriteProducedEmptyGraph:
        return []
    return [app.precursor_keys for app in applications]


def enumerate_precursors(
    target: MolecularGraph,
    templates: list[ReactionTemplate],
    max_workers: int = 1,
) -> list[CandidatePrecursor]:
    """Union of template applications with merged provenance.

    Candidates are deduplicated by precursor-key multiset across templates;
    each retains every (template_id, ec_numbers) record that produced it.
    Output order is (first template_id, canonical key), independent of the
    worker count.
    """
    ordered = sorted(templates, key=lambda t: t.template_id)
    if max_workers > 1 and len(ordered) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            per_template = list(
                pool.map(_apply_one, [(t, target) for t in ordered])
            )
    else:
        per_template = [_apply_one((t, target)) for t in ordered]

    merged: dict[tuple[str, ...], list[tuple[str, tuple[str, ...]]]] = {}
    for template, keys_list in zip(ordered, per_template):
        record = (template.template_id, template.ec_numbers)
        for keys in keys_list:
            provenance = merged.setdefault(keys, [])
            if record not in provenance:
                provenance.append(record)
    candidates = [
        CandidatePrecursor(keys, tuple(provenance))
        for keys, provenance in merged.items()
    ]
    candidates.sort(key=lambda c: (c.provenance[0][0], c.precursor_keys))
    return candidates
