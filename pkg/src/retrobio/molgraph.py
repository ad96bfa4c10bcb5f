"""
Molecular graphs and a SMILES subset parser/writer.

Molecules are immutable labeled graphs parsed from a SMILES subset:
the organic subset (C, N, O, P, S, F, Cl, Br, I), aromatic lowercase
atoms, ring closures (single digit or %nn), branches, '.'-separated
components, and bracket atoms carrying charge, explicit hydrogen count
and an atom-atom map index. Stereo markers, isotopes and wildcards are
not supported.

Kekule structures are NOT auto-aromatized: "C1=CC=CC=C1" and "c1ccccc1"
parse to different graphs with different canonical forms. Aromatic
heteroatoms that donate a lone pair to the ring (furan oxygen, pyrrole
nitrogen) must be written in brackets ([o], [nH]) because implicit
hydrogen counting treats an aromatic bond as order 1.5.

Canonicalization uses iterative invariant refinement with deterministic
tie-breaking, so any atom permutation of the same graph yields the same
string. The canonical string is the molecule identity used across the
whole engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

__all__ = [
    "Atom",
    "Bond",
    "MolecularGraph",
    "SmilesSyntaxError",
    "EmptyInput",
    "UnknownElement",
    "MalformedBracketAtom",
    "UnbalancedRingClosure",
    "ValenceExceeded",
    "parse_smiles",
    "write_smiles",
    "canonicalize",
    "add_explicit_hydrogens",
    "remove_explicit_hydrogens",
    "SINGLE",
    "DOUBLE",
    "TRIPLE",
    "AROMATIC",
    "VALENCES",
]

# Bond orders.
SINGLE = "single"
DOUBLE = "double"
TRIPLE = "triple"
AROMATIC = "aromatic"

BOND_SYMBOLS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC}
ORDER_SYMBOLS = {SINGLE: "-", DOUBLE: "=", TRIPLE: "#", AROMATIC: ":"}
#: Fractional contribution of each bond order to an atom's valence.
ORDER_VALENCE = {SINGLE: 1.0, DOUBLE: 2.0, TRIPLE: 3.0, AROMATIC: 1.5}

#: Allowed valences per element, lowest first. Multi-valent elements use
#: the lowest valence able to host the atom's bonds.
VALENCES: dict[str, tuple[int, ...]] = {
    "C": (4,),
    "N": (3,),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
    "H": (1,),
}

#: Elements writable without brackets.
ORGANIC_SUBSET = {"C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
#: Elements with a lowercase aromatic form.
AROMATIC_SUBSET = {"C", "N", "O", "P", "S"}


class SmilesSyntaxError(ValueError):
    """Malformed SMILES input; ``offset`` is the byte position at fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class EmptyInput(SmilesSyntaxError):
    pass


class UnknownElement(SmilesSyntaxError):
    pass


class MalformedBracketAtom(SmilesSyntaxError):
    pass


class UnbalancedRingClosure(SmilesSyntaxError):
    pass


class ValenceExceeded(ValueError):
    """An atom's bonds exceed the largest valence allowed for its element."""


@dataclass(frozen=True, slots=True)
class Atom:
    """A labeled atom. ``hydrogens`` counts hydrogens not present as graph
    atoms; explicit H neighbours are counted separately."""

    element: str
    aromatic: bool = False
    hydrogens: int = 0
    charge: int = 0
    map_index: int | None = None


@dataclass(frozen=True, slots=True)
class Bond:
    """An undirected bond between two atom indices (stored low, high)."""

    a: int
    b: int
    order: str = SINGLE

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("self-loop bond")
        if self.a > self.b:
            lo, hi = self.b, self.a
            object.__setattr__(self, "a", lo)
            object.__setattr__(self, "b", hi)

    def other(self, idx: int) -> int:
        return self.b if idx == self.a else self.a


@dataclass(frozen=True)
class MolecularGraph:
    """An immutable simple graph of atoms and bonds."""

    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    _adjacency: tuple[tuple[tuple[int, str], ...], ...] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self):
        if not self.atoms:
            raise ValueError("a molecular graph must contain at least one atom")
        n = len(self.atoms)
        seen: set[tuple[int, int]] = set()
        adj: list[list[tuple[int, str]]] = [[] for _ in range(n)]
        for bond in self.bonds:
            if not (0 <= bond.a < n and 0 <= bond.b < n):
                raise ValueError(f"bond endpoint out of range: {bond}")
            key = (bond.a, bond.b)
            if key in seen:
                raise ValueError(f"parallel bond: {bond}")
            seen.add(key)
            adj[bond.a].append((bond.b, bond.order))
            adj[bond.b].append((bond.a, bond.order))
        object.__setattr__(self, "_adjacency", tuple(tuple(x) for x in adj))

    def neighbors(self, idx: int) -> tuple[tuple[int, str], ...]:
        """(neighbor index, bond order) pairs for one atom."""
        return self._adjacency[idx]

    def degree(self, idx: int) -> int:
        return len(self._adjacency[idx])

    def total_hydrogens(self, idx: int) -> int:
        """Stored hydrogen count plus explicit H neighbours."""
        return self.atoms[idx].hydrogens + sum(
            1 for j, _ in self._adjacency[idx] if self.atoms[j].element == "H"
        )

    def heavy_atom_count(self) -> int:
        return sum(1 for a in self.atoms if a.element != "H")

    def components(self) -> list[list[int]]:
        """Connected components as sorted atom-index lists."""
        seen = [False] * len(self.atoms)
        comps = []
        for start in range(len(self.atoms)):
            if seen[start]:
                continue
            stack, comp = [start], []
            seen[start] = True
            while stack:
                u = stack.pop()
                comp.append(u)
                for v, _ in self._adjacency[u]:
                    if not seen[v]:
                        seen[v] = True
                        stack.append(v)
            comps.append(sorted(comp))
        return comps

    def subgraph(self, indices: list[int]) -> "MolecularGraph":
        """Induced subgraph; ``indices`` order defines the new atom order."""
        remap = {old: new for new, old in enumerate(indices)}
        atoms = tuple(self.atoms[i] for i in indices)
        bonds = tuple(
            Bond(remap[b.a], remap[b.b], b.order)
            for b in self.bonds
            if b.a in remap and b.b in remap
        )
        return MolecularGraph(atoms, bonds)

    def ring_bonds(self) -> set[tuple[int, int]]:
        """Bonds lying on a cycle, as (low, high) index pairs."""
        return _ring_bonds(len(self.atoms), self.bonds)


def _ring_bonds(n: int, bonds: tuple[Bond, ...] | list) -> set[tuple[int, int]]:
    """Non-bridge edges found with one DFS low-link pass."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for k, bond in enumerate(bonds):
        adj[bond.a].append((bond.b, k))
        adj[bond.b].append((bond.a, k))
    index = [-1] * n
    low = [0] * n
    bridges: set[int] = set()
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        stack = [(root, -1, iter(adj[root]))]
        index[root] = low[root] = counter
        counter += 1
        while stack:
            u, in_edge, it = stack[-1]
            advanced = False
            for v, k in it:
                if k == in_edge:
                    continue
                if index[v] == -1:
                    index[v] = low[v] = counter
                    counter += 1
                    stack.append((v, k, iter(adj[v])))
                    advanced = True
                    break
                low[u] = min(low[u], index[v])
            if advanced:
                continue
            stack.pop()
            if stack:
                p = stack[-1][0]
                low[p] = min(low[p], low[u])
                if low[u] > index[p]:
                    bridges.add(in_edge)
    # Non-bridge edges are exactly the edges lying on a cycle.
    return {(bond.a, bond.b) for k, bond in enumerate(bonds) if k not in bridges}


def effective_valences(element: str, charge: int = 0) -> tuple[int, ...] | None:
    """Allowed valences adjusted for formal charge.

    Lone-pair bearers (N, O, P, S) gain a bond per positive charge and lose
    one per negative; carbon and halogens lose a bond either way. None when
    the element is unknown or no non-negative valence remains.
    """
    base = VALENCES.get(element)
    if base is None:
        return None
    if charge == 0:
        return base
    if element in ("N", "O", "P", "S"):
        shifted = tuple(v + charge for v in base)
    else:
        shifted = tuple(v - abs(charge) for v in base)
    shifted = tuple(v for v in shifted if v >= 0)
    return shifted or None


def lowest_feasible_valence(
    element: str, bond_valence: float, charge: int = 0
) -> int | None:
    """Smallest allowed valence holding ``bond_valence``; None if exceeded."""
    allowed = effective_valences(element, charge)
    if allowed is None:
        return None
    needed = int(bond_valence)
    for v in allowed:
        if v >= needed:
            return v
    return None


def implied_hydrogens(
    element: str, bond_valence: float, charge: int = 0
) -> int | None:
    """Hydrogens the parser would infer for a bare organic-subset atom."""
    v = lowest_feasible_valence(element, bond_valence, charge)
    if v is None:
        return None
    return v - int(bond_valence)


# ---------------------------------------------------------------------------
# Parsing


class _ChainParser:
    """Shared SMILES/SMARTS chain reader: branches, rings, bonds, dots.

    Atom tokens are delegated to ``parse_atom(text, pos) -> (payload, end)``
    so the molecule and pattern parsers can share the structural machinery.
    """

    def __init__(self, text: str, parse_atom):
        self.text = text
        self.parse_atom = parse_atom
        self.atoms: list = []  # payloads
        self.offsets: list[int] = []
        self.bonds: list[tuple[int, int, str | None]] = []

    def run(self):
        text = self.text
        if not text:
            raise EmptyInput("empty SMILES input", 0)
        prev: int | None = None
        pending: str | None = None
        pending_pos = 0
        branch_stack: list[int | None] = []
        open_rings: dict[int, tuple[int, str | None, int]] = {}
        just_opened = False
        i = 0
        while i < len(text):
            ch = text[i]
            if ch == "(":
                if pending is not None:
                    raise SmilesSyntaxError("bond symbol before '('", pending_pos)
                if prev is None:
                    raise SmilesSyntaxError("branch before any atom", i)
                if just_opened:
                    raise SmilesSyntaxError("branch cannot start with '('", i)
                branch_stack.append(prev)
                just_opened = True
                i += 1
            elif ch == ")":
                if pending is not None:
                    raise SmilesSyntaxError("bond symbol before ')'", pending_pos)
                if not branch_stack:
                    raise SmilesSyntaxError("unmatched ')'", i)
                if just_opened:
                    raise SmilesSyntaxError("empty branch", i)
                prev = branch_stack.pop()
                i += 1
            elif ch in BOND_SYMBOLS:
                if pending is not None:
                    raise SmilesSyntaxError("two bond symbols in a row", i)
                pending = BOND_SYMBOLS[ch]
                pending_pos = i
                i += 1
            elif ch == ".":
                if pending is not None:
                    raise SmilesSyntaxError("bond symbol before '.'", pending_pos)
                if branch_stack:
                    raise SmilesSyntaxError("'.' inside a branch", i)
                if prev is None:
                    raise SmilesSyntaxError("'.' before any atom", i)
                prev = None
                i += 1
            elif ch.isdigit() or ch == "%":
                if prev is None:
                    raise UnbalancedRingClosure("ring closure before any atom", i)
                if ch == "%":
                    if i + 2 >= len(text) or not text[i + 1 : i + 3].isdigit():
                        raise UnbalancedRingClosure("malformed '%nn' ring number", i)
                    number = int(text[i + 1 : i + 3])
                    i += 3
                else:
                    number = int(ch)
                    i += 1
                if number in open_rings:
                    other, other_order, other_pos = open_rings.pop(number)
                    order = pending if pending is not None else other_order
                    if (
                        pending is not None
                        and other_order is not None
                        and pending != other_order
                    ):
                        raise UnbalancedRingClosure(
                            f"conflicting bond orders on ring closure {number}",
                            pending_pos,
                        )
                    if other == prev:
                        raise UnbalancedRingClosure(
                            f"ring closure {number} bonds an atom to itself", i - 1
                        )
                    self.bonds.append((other, prev, order))
                else:
                    open_rings[number] = (prev, pending, i - 1)
                pending = None
            else:
                payload, end = self.parse_atom(text, i)
                idx = len(self.atoms)
                self.atoms.append(payload)
                self.offsets.append(i)
                if prev is not None:
                    self.bonds.append((prev, idx, pending))
                elif pending is not None:
                    raise SmilesSyntaxError("dangling bond symbol", pending_pos)
                pending = None
                prev = idx
                just_opened = False
                i = end
        if pending is not None:
            raise SmilesSyntaxError("dangling bond symbol at end", pending_pos)
        if branch_stack:
            raise SmilesSyntaxError("unclosed '('", len(text) - 1)
        if open_rings:
            number, (_, _, pos) = sorted(open_rings.items())[0]
            raise UnbalancedRingClosure(f"unclosed ring closure {number}", pos)
        if not self.atoms:
            raise EmptyInput("no atoms in input", 0)


_TWO_LETTER = {"Cl", "Br"}


def _parse_plain_atom(text: str, pos: int):
    """Organic-subset atom outside brackets. Returns a builder dict."""
    ch = text[pos]
    if ch.isupper():
        sym = text[pos : pos + 2]
        if sym in _TWO_LETTER:
            return {"element": sym, "aromatic": False, "offset": pos}, pos + 2
        if ch in ORGANIC_SUBSET and ch != "H":
            return {"element": ch, "aromatic": False, "offset": pos}, pos + 1
        raise UnknownElement(f"unknown element {ch!r}", pos)
    if ch.islower():
        up = ch.upper()
        if up in AROMATIC_SUBSET:
            return {"element": up, "aromatic": True, "offset": pos}, pos + 1
        raise UnknownElement(f"unknown aromatic element {ch!r}", pos)
    raise SmilesSyntaxError(f"unexpected character {ch!r}", pos)


def _parse_bracket_body(
    text: str, pos: int, allow_wildcard: bool = False
) -> tuple[dict, int]:
    """Parse ``[...]`` starting at ``pos``; returns builder dict and end."""
    end = text.find("]", pos)
    if end == -1:
        raise MalformedBracketAtom("unterminated bracket atom", pos)
    body = text[pos + 1 : end]
    if not body:
        raise MalformedBracketAtom("empty bracket atom", pos)
    i = 0
    out: dict = {
        "offset": pos,
        "hydrogens": 0,
        "charge": 0,
        "map_index": None,
        # Patterns need to distinguish "[C]" (unconstrained) from "[CH0]".
        "h_explicit": False,
        "charge_explicit": False,
    }
    if body[i] == "*":
        if not allow_wildcard:
            raise UnknownElement("wildcard atom outside a pattern", pos + 1)
        out["element"] = None
        out["aromatic"] = None
        i += 1
    elif body[i].isupper():
        sym = body[i : i + 2]
        if sym in _TWO_LETTER:
            i += 2
        else:
            sym = body[i]
            i += 1
        if sym not in VALENCES:
            raise UnknownElement(f"unknown element {sym!r}", pos + 1)
        out["element"] = sym
        out["aromatic"] = False
    elif body[i].islower():
        up = body[i].upper()
        if up not in AROMATIC_SUBSET:
            raise UnknownElement(f"unknown aromatic element {body[i]!r}", pos + 1)
        out["element"] = up
        out["aromatic"] = True
        i += 1
    else:
        raise MalformedBracketAtom(f"bad bracket atom start {body[i]!r}", pos + 1)
    # Optional properties, in SMILES order: Hn, Dn (patterns only), charge, :map
    while i < len(body):
        c = body[i]
        if c == "H":
            i += 1
            count = 1
            if i < len(body) and body[i].isdigit():
                count = int(body[i])
                i += 1
            out["hydrogens"] = count
            out["h_explicit"] = True
        elif c == "D":
            if not allow_wildcard:
                raise MalformedBracketAtom("degree constraint outside a pattern", pos + i)
            i += 1
            if i >= len(body) or not body[i].isdigit():
                raise MalformedBracketAtom("'D' needs a digit", pos + i)
            out["degree"] = int(body[i])
            i += 1
        elif c in "+-":
            sign = 1 if c == "+" else -1
            i += 1
            if i < len(body) and body[i].isdigit():
                out["charge"] = sign * int(body[i])
                i += 1
            else:
                magnitude = 1
                while i < len(body) and body[i] == c:
                    magnitude += 1
                    i += 1
                out["charge"] = sign * magnitude
            out["charge_explicit"] = True
        elif c == ":":
            i += 1
            j = i
            while j < len(body) and body[j].isdigit():
                j += 1
            if j == i:
                raise MalformedBracketAtom("':' needs a map number", pos + i)
            out["map_index"] = int(body[i:j])
            if out["map_index"] <= 0:
                raise MalformedBracketAtom("map index must be positive", pos + i)
            i = j
        else:
            raise MalformedBracketAtom(f"unsupported bracket token {c!r}", pos + i)
    return out, end + 1


def _parse_atom_token(text: str, pos: int):
    if text[pos] == "[":
        out, end = _parse_bracket_body(text, pos, allow_wildcard=False)
        out["fixed_h"] = True  # bracket hydrogen counts are authoritative
        return out, end
    out, end = _parse_plain_atom(text, pos)
    out.update({"hydrogens": None, "charge": 0, "map_index": None, "fixed_h": False})
    return out, end


def parse_smiles(text: str) -> MolecularGraph:
    """Parse a SMILES string into a MolecularGraph.

    Raises EmptyInput, UnknownElement, MalformedBracketAtom,
    UnbalancedRingClosure or SmilesSyntaxError with the byte offset of the
    problem, and ValenceExceeded when a bare atom's bonds exceed its element's
    largest allowed valence.
    """
    if text is None or text == "":
        raise EmptyInput("empty SMILES input", 0)
    parser = _ChainParser(text, _parse_atom_token)
    parser.run()
    builders = parser.atoms
    n = len(builders)

    # Resolve default (symbol-less) bonds: aromatic when both endpoints are
    # aromatic atoms and the bond lies in a ring, single otherwise.
    tentative = [
        Bond(a, b, AROMATIC if order is None else order)
        for a, b, order in parser.bonds
    ]
    in_ring = _ring_bonds(n, tentative)
    bonds = []
    for a, b, order in parser.bonds:
        if order is None:
            lo, hi = min(a, b), max(a, b)
            if (
                builders[a]["aromatic"]
                and builders[b]["aromatic"]
                and (lo, hi) in in_ring
            ):
                order = AROMATIC
            else:
                order = SINGLE
        bonds.append(Bond(a, b, order))

    # Aromatic atoms must sit on a ring; aromatic bonds need aromatic ends.
    ring_atoms = {i for bond in _ring_bonds(n, bonds) for i in (bond[0], bond[1])}
    for idx, info in enumerate(builders):
        if info["aromatic"] and idx not in ring_atoms:
            raise SmilesSyntaxError(
                "aromatic atom outside any ring", info["offset"]
            )
    for bond in bonds:
        if bond.order == AROMATIC and not (
            builders[bond.a]["aromatic"] and builders[bond.b]["aromatic"]
        ):
            raise SmilesSyntaxError(
                "aromatic bond between non-aromatic atoms",
                builders[bond.a]["offset"],
            )

    # Implicit hydrogens for bare atoms; valence check while we are at it.
    bond_valence = [0.0] * n
    for bond in bonds:
        bond_valence[bond.a] += ORDER_VALENCE[bond.order]
        bond_valence[bond.b] += ORDER_VALENCE[bond.order]
    atoms = []
    for idx, info in enumerate(builders):
        hydrogens = info["hydrogens"]
        if hydrogens is None:
            hydrogens = implied_hydrogens(info["element"], bond_valence[idx])
            if hydrogens is None:
                raise ValenceExceeded(
                    f"atom {info['element']} at offset {info['offset']} has "
                    f"bond valence {bond_valence[idx]:g} exceeding its maximum"
                )
        atoms.append(
            Atom(
                element=info["element"],
                aromatic=bool(info["aromatic"]),
                hydrogens=hydrogens,
                charge=info["charge"],
                map_index=info["map_index"],
            )
        )
    return MolecularGraph(tuple(atoms), tuple(bonds))


# ---------------------------------------------------------------------------
# Writing


def _atom_token(mol: MolecularGraph, idx: int) -> str:
    atom = mol.atoms[idx]
    bond_valence = sum(ORDER_VALENCE[o] for _, o in mol.neighbors(idx))
    symbol = atom.element.lower() if atom.aromatic else atom.element
    bare_ok = (
        atom.charge == 0
        and atom.map_index is None
        and atom.element != "H"
        and atom.element in ORGANIC_SUBSET
        and (not atom.aromatic or atom.element in AROMATIC_SUBSET)
        and atom.hydrogens == implied_hydrogens(atom.element, bond_valence)
    )
    if bare_ok:
        return symbol
    parts = [symbol]
    if atom.hydrogens == 1:
        parts.append("H")
    elif atom.hydrogens > 1:
        parts.append(f"H{atom.hydrogens}")
    if atom.charge != 0:
        sign = "+" if atom.charge > 0 else "-"
        parts.append(sign if abs(atom.charge) == 1 else f"{sign}{abs(atom.charge)}")
    if atom.map_index is not None:
        parts.append(f":{atom.map_index}")
    return "[" + "".join(parts) + "]"


def _bond_token(mol: MolecularGraph, a: int, b: int, order: str) -> str:
    both_aromatic = mol.atoms[a].aromatic and mol.atoms[b].aromatic
    if order == SINGLE:
        return "-" if both_aromatic else ""
    if order == AROMATIC:
        return "" if both_aromatic else ":"
    return ORDER_SYMBOLS[order]


def _write_recursive(mol: MolecularGraph, start: int, rank: list[int]) -> str:
    """Write one connected component, visiting neighbours by ascending rank."""
    by_rank = lambda pair: rank[pair[0]]

    # Pre-walk to split edges into tree edges and ring closures; the ring
    # digit for each closure is fixed by traversal order, so the output is a
    # pure function of (graph, rank).
    ring_lookup: dict[tuple[int, int], tuple[str, str]] = {}
    seen: set[int] = set()

    def prewalk(u: int, par: int | None):
        seen.add(u)
        skipped_parent = False
        for v, o in sorted(mol.neighbors(u), key=by_rank):
            edge = (min(u, v), max(u, v))
            if v == par and not skipped_parent:
                skipped_parent = True
                continue
            if edge in ring_lookup:
                continue
            if v in seen:
                n = len(ring_lookup) + 1
                digit = str(n) if n < 10 else f"%{n:02d}"
                ring_lookup[edge] = (digit, o)
            else:
                prewalk(v, u)

    prewalk(start, None)
    opened: set[tuple[int, int]] = set()
    visited: set[int] = set()

    def emit(u: int, par: int | None) -> str:
        visited.add(u)
        text = _atom_token(mol, u)
        tree_children: list[tuple[int, str]] = []
        skipped_parent = False
        for v, o in sorted(mol.neighbors(u), key=by_rank):
            edge = (min(u, v), max(u, v))
            if v == par and not skipped_parent:
                skipped_parent = True
                continue
            if edge in ring_lookup:
                digit, order = ring_lookup[edge]
                if edge in opened:
                    text += digit
                else:
                    opened.add(edge)
                    text += _bond_token(mol, u, v, order) + digit
            elif v not in visited:
                tree_children.append((v, o))
        for pos, (v, o) in enumerate(tree_children):
            sub = _bond_token(mol, u, v, o) + emit(v, u)
            text += sub if pos == len(tree_children) - 1 else f"({sub})"
        return text

    return emit(start, None)


def write_smiles(mol: MolecularGraph) -> str:
    """Write a SMILES string that re-parses to a graph isomorphic to ``mol``.

    Components are joined with '.'; atom order follows the input graph.
    """
    rank = list(range(len(mol.atoms)))
    return ".".join(_write_recursive(mol, comp[0], rank) for comp in mol.components())


# ---------------------------------------------------------------------------
# Canonicalization


def _initial_invariants(mol: MolecularGraph) -> list[tuple]:
    out = []
    for idx, atom in enumerate(mol.atoms):
        out.append(
            (
                atom.element,
                mol.degree(idx),
                atom.charge,
                mol.total_hydrogens(idx),
                atom.aromatic,
            )
        )
    return out


_ORDER_CODE = {SINGLE: 1, DOUBLE: 2, TRIPLE: 3, AROMATIC: 4}


def _refine(mol: MolecularGraph, keys: list) -> list[int]:
    """Iteratively refine atom classes until the partition stabilizes."""
    uniq = sorted(set(keys))
    ranks = [uniq.index(k) for k in keys]
    n_classes = len(uniq)
    while True:
        keys2 = [
            (
                ranks[i],
                tuple(
                    sorted(
                        (_ORDER_CODE[o], ranks[j]) for j, o in mol.neighbors(i)
                    )
                ),
            )
            for i in range(len(mol.atoms))
        ]
        uniq2 = sorted(set(keys2))
        ranks = [uniq2.index(k) for k in keys2]
        if len(uniq2) == n_classes:
            return ranks
        n_classes = len(uniq2)


def _leaf_signature(mol: MolecularGraph, idx: int):
    """Signature making leaf siblings (e.g. hydrogens on one atom)
    recognizably automorphic so tie-breaking skips duplicates."""
    if mol.degree(idx) > 1:
        return ("nonleaf", idx)
    nbr = mol.neighbors(idx)
    anchor = nbr[0] if nbr else None
    return ("leaf", mol.atoms[idx], anchor)


def _canonical_component(mol: MolecularGraph, base_keys: list) -> str:
    ranks = _refine(mol, base_keys)
    n = len(mol.atoms)
    class_members: dict[int, list[int]] = {}
    for i, r in enumerate(ranks):
        class_members.setdefault(r, []).append(i)
    ambiguous = sorted(
        (r, members) for r, members in class_members.items() if len(members) > 1
    )
    if not ambiguous:
        return _write_recursive(mol, ranks.index(min(ranks)), ranks)
    _, members = ambiguous[0]
    candidates = []
    seen_sigs = set()
    for m in members:
        sig = _leaf_signature(mol, m)
        if sig[0] == "leaf" and sig in seen_sigs:
            continue
        seen_sigs.add(sig)
        promoted = [(ranks[i], 1 if i == m else 0) for i in range(n)]
        candidates.append(_canonical_component(mol, promoted))
    return min(candidates)


def canonicalize(mol: MolecularGraph) -> str:
    """Canonical SMILES: invariant under atom permutation, map indices
    stripped, components sorted. ``canonicalize(parse_smiles(s))`` is a fixed
    point for any s already in canonical form."""
    stripped = MolecularGraph(
        tuple(
            replace(a, map_index=None) if a.map_index is not None else a
            for a in mol.atoms
        ),
        mol.bonds,
    )
    pieces = []
    for comp in stripped.components():
        sub = stripped.subgraph(comp)
        pieces.append(_canonical_component(sub, _initial_invariants(sub)))
    return ".".join(sorted(pieces))


def canonical_key(smiles: str) -> str:
    """Parse then canonicalize; convenience for one-shot identity lookups."""
    return canonicalize(parse_smiles(smiles))


# ---------------------------------------------------------------------------
# Hydrogen handling


def add_explicit_hydrogens(mol: MolecularGraph) -> MolecularGraph:
    """Materialize every stored hydrogen count as explicit H atoms.

    Idempotent: a second application is a no-op because all counts are zero
    afterwards. Raises ValenceExceeded if an uncharged atom's bonds already
    exceed its element's largest valence.
    """
    atoms = list(mol.atoms)
    bonds = list(mol.bonds)
    for idx, atom in enumerate(mol.atoms):
        allowed = effective_valences(atom.element, atom.charge)
        if allowed is not None:
            bond_valence = sum(ORDER_VALENCE[o] for _, o in mol.neighbors(idx))
            if int(bond_valence) > max(allowed):
                raise ValenceExceeded(
                    f"atom {idx} ({atom.element}) exceeds its maximum valence"
                )
        if atom.hydrogens:
            for _ in range(atom.hydrogens):
                atoms.append(Atom("H"))
                bonds.append(Bond(idx, len(atoms) - 1))
            atoms[idx] = replace(atom, hydrogens=0)
    return MolecularGraph(tuple(atoms), tuple(bonds))


def remove_explicit_hydrogens(mol: MolecularGraph) -> MolecularGraph:
    """Fold plain explicit H atoms back into their neighbour's count.

    An H atom is folded when it is uncharged, unmapped and single-bonded to
    exactly one non-hydrogen atom; anything else (e.g. [H][H]) is kept.
    """
    drop: set[int] = set()
    gained: dict[int, int] = {}
    for idx, atom in enumerate(mol.atoms):
        if atom.element != "H" or atom.charge != 0 or atom.map_index is not None:
            continue
        if atom.hydrogens != 0 or mol.degree(idx) != 1:
            continue
        nbr, order = mol.neighbors(idx)[0]
        if order != SINGLE or mol.atoms[nbr].element == "H":
            continue
        drop.add(idx)
        gained[nbr] = gained.get(nbr, 0) + 1
    if not drop:
        return mol
    keep = [i for i in range(len(mol.atoms)) if i not in drop]
    remap = {old: new for new, old in enumerate(keep)}
    atoms = tuple(
        replace(mol.atoms[i], hydrogens=mol.atoms[i].hydrogens + gained.get(i, 0))
        for i in keep
    )
    bonds = tuple(
        Bond(remap[b.a], remap[b.b], b.order)
        for b in mol.bonds
        if b.a in remap and b.b in remap
    )
    return MolecularGraph(atoms, bonds)
