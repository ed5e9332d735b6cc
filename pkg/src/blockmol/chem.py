"""SMILES tokenization, structural validation, descriptors, and fingerprints.

The validator is a deliberately small proxy for a full cheminformatics stack:
it enforces grammar (rings, branches, bonds), a fixed valence table, and a
ring-membership rule for aromatic atoms.  It does not kekulize and does not
aim for parity with heavyweight toolkits.
"""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field
from enum import Enum

# --- errors -----------------------------------------------------------------


class ChemError(ValueError):
    """Base class for tokenizer and validator failures.

    ``position`` is a character offset into the original SMILES string,
    or -1 when no position applies.
    """

    def __init__(self, message: str, position: int = -1):
        super().__init__(message)
        self.position = position


class UnknownCharacter(ChemError):
    pass


class UnclosedRing(ChemError):
    def __init__(self, message: str, position: int = -1, digit: int = -1):
        super().__init__(message, position)
        self.digit = digit


class UnbalancedBranch(ChemError):
    pass


class DanglingBond(ChemError):
    pass


class RingBondError(ChemError):
    """Self-closures, duplicate ring bonds, or conflicting ring bond orders."""


class ValenceExceeded(ChemError):
    def __init__(self, message: str, position: int = -1, atom_index: int = -1):
        super().__init__(message, position)
        self.atom_index = atom_index


class AromaticityError(ChemError):
    """Lowercase atom outside a closed all-aromatic ring of size 5 or 6."""


class EmptyMolecule(ChemError):
    pass


class UnknownToken(ChemError):
    pass


class WidthMismatch(ValueError):
    pass


# --- tokens -----------------------------------------------------------------


class TokenKind(Enum):
    ATOM = "atom"
    BOND = "bond"
    RING = "ring"
    BRANCH_OPEN = "branch_open"
    BRANCH_CLOSE = "branch_close"
    DOT = "dot"
    CONTROL = "control"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    pos: int = -1


TokenSeq = list


PAD, BOS, EOS, MASK = "[PAD]", "[BOS]", "[EOS]", "[MASK]"
CONTROL_TOKENS = (PAD, BOS, EOS, MASK)

# Organic-subset symbols readable without brackets.
TWO_LETTER = ("Cl", "Br")
ONE_LETTER = frozenset("BCNOPSFI")
AROMATIC_LETTER = frozenset("bcnops")
BOND_CHARS = frozenset("-=#:/\\")

ATOMIC_WEIGHTS = {
    "H": 1.008, "B": 10.81, "C": 12.011, "N": 14.007, "O": 15.999,
    "F": 18.998, "Na": 22.990, "Mg": 24.305, "Al": 26.982, "Si": 28.085,
    "P": 30.974, "S": 32.06, "Cl": 35.45, "K": 39.098, "Ca": 40.078,
    "Fe": 55.845, "Cu": 63.546, "Zn": 65.38, "As": 74.922, "Se": 78.971,
    "Br": 79.904, "Sn": 118.71, "I": 126.904,
}
ELEMENTS = frozenset(ATOMIC_WEIGHTS)
HALOGENS = frozenset(("F", "Cl", "Br", "I"))

# Hard ceiling used by the validity check.  Aromatic bonds are counted with
# their sigma order (1) here; lone-pair donors such as pyrrole NH would
# otherwise be rejected.
VALENCE_MAX = {
    "H": 1, "B": 3, "C": 4, "N": 3, "O": 2, "F": 1, "Si": 4, "P": 5,
    "S": 6, "Cl": 1, "As": 5, "Se": 6, "Br": 1, "Sn": 4, "I": 1,
}
_VALENCE_DEFAULT = 6

# Valence sets used only for implicit-hydrogen assignment on bare
# organic-subset atoms; bracket atoms never receive implicit hydrogens.
IMPLICIT_VALENCES = {
    "B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5),
    "S": (2, 4, 6), "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
}

_BRACKET_RE = re.compile(
    r"""\[
        (?P<isotope>\d+)?
        (?P<symbol>[A-Z][a-z]?|[a-z]{1,2})
        (?P<chiral>@{1,2})?
        (?P<hcount>H\d*)?
        (?P<charge>[+-]\d+|\++|-+)?
        (?::\d+)?
        \]$""",
    re.X,
)


def max_valence(element: str, charge: int) -> int:
    if element == "N" and charge == 1:
        return 5
    return VALENCE_MAX.get(element, _VALENCE_DEFAULT)


def _parse_bracket(text: str, pos: int):
    """Split a bracket-atom token into (element, aromatic, chiral, h, charge)."""
    m = _BRACKET_RE.match(text)
    if m is None:
        raise UnknownCharacter(f"malformed bracket atom {text!r}", pos)
    symbol = m.group("symbol")
    aromatic = symbol[0].islower()
    element = symbol.capitalize() if aromatic else symbol
    if element not in ELEMENTS:
        raise UnknownCharacter(f"unknown element {symbol!r} in {text!r}", pos)
    if aromatic and symbol not in ("b", "c", "n", "o", "p", "s", "se", "as"):
        raise UnknownCharacter(f"{symbol!r} cannot be aromatic", pos)
    hcount = 0
    if m.group("hcount"):
        digits = m.group("hcount")[1:]
        hcount = int(digits) if digits else 1
    charge = 0
    raw = m.group("charge")
    if raw:
        if raw[0] == "+":
            charge = int(raw[1:]) if raw[1:].isdigit() else len(raw)
        else:
            charge = -(int(raw[1:]) if raw[1:].isdigit() else len(raw))
    return element, aromatic, m.group("chiral") or "", hcount, charge


def tokenize(text: str) -> list[Token]:
    """Scan a SMILES string into tokens.

    Concatenating ``token.text`` over the result reproduces the input
    exactly.  Raises UnknownCharacter at the first unscannable offset.
    """
    out: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "[":
            matched = False
            for ctrl in CONTROL_TOKENS:
                if text.startswith(ctrl, i):
                    out.append(Token(TokenKind.CONTROL, ctrl, i))
                    i += len(ctrl)
                    matched = True
                    break
            if matched:
                continue
            j = text.find("]", i)
            if j < 0:
                raise UnknownCharacter("unterminated bracket atom", i)
            tok = text[i : j + 1]
            _parse_bracket(tok, i)  # validates, raises UnknownCharacter
            out.append(Token(TokenKind.ATOM, tok, i))
            i = j + 1
        elif text.startswith(TWO_LETTER, i):
            out.append(Token(TokenKind.ATOM, text[i : i + 2], i))
            i += 2
        elif ch in ONE_LETTER or ch in AROMATIC_LETTER:
            out.append(Token(TokenKind.ATOM, ch, i))
            i += 1
        elif ch in BOND_CHARS:
            out.append(Token(TokenKind.BOND, ch, i))
            i += 1
        elif ch.isdigit():
            out.append(Token(TokenKind.RING, ch, i))
            i += 1
        elif ch == "%":
            if i + 2 >= n or not text[i + 1 : i + 3].isdigit():
                raise UnknownCharacter("'%' needs two digits", i)
            out.append(Token(TokenKind.RING, text[i : i + 3], i))
            i += 3
        elif ch == "(":
            out.append(Token(TokenKind.BRANCH_OPEN, ch, i))
            i += 1
        elif ch == ")":
            out.append(Token(TokenKind.BRANCH_CLOSE, ch, i))
            i += 1
        elif ch == ".":
            out.append(Token(TokenKind.DOT, ch, i))
            i += 1
        else:
            raise UnknownCharacter(f"unknown character {ch!r}", i)
    return out


def detokenize(tokens: TokenSeq) -> str:
    return "".join(t.text for t in tokens)


# --- parsed molecules --------------------------------------------------------


@dataclass
class Atom:
    element: str
    aromatic: bool = False
    charge: int = 0
    explicit_h: int = 0
    bracket: bool = False
    chiral: str = ""
    pos: int = -1


@dataclass
class Bond:
    a: int
    b: int
    order: float  # 1, 1.5, 2, or 3
    stereo: str = ""
    ring_closure: bool = False
    in_ring: bool = False


@dataclass
class ParsedMol:
    atoms: list[Atom]
    bonds: list[Bond]
    rings: list[list[int]] = field(default_factory=list)
    smiles: str = ""

    def neighbors(self, i: int):
        for b in self.bonds:
            if b.a == i:
                yield b.b, b
            elif b.b == i:
                yield b.a, b

    def bond_order_sum(self, i: int) -> float:
        return sum(b.order for _, b in self.neighbors(i))

    def sigma_order_sum(self, i: int) -> float:
        """Bond-order sum with aromatic bonds counted at their sigma order."""
        return sum(1.0 if b.order == 1.5 else b.order for _, b in self.neighbors(i))


_BOND_ORDER = {"-": 1.0, "=": 2.0, "#": 3.0, ":": 1.5, "/": 1.0, "\\": 1.0}


def _shortest_cycle(mol: ParsedMol, bond_index: int) -> list[int] | None:
    """Shortest cycle through bond ``bond_index``, or None for a bridge.

    Dijkstra over (edge count, non-aromatic atom count): among equally short
    alternative paths, the one staying on aromatic atoms wins, so a fused
    aromatic ring is not shadowed by its saturated neighbor.
    """
    closure = mol.bonds[bond_index]
    start, goal = closure.a, closure.b
    unreached = (1 << 30, 0)
    best: dict[int, tuple[int, int]] = {start: (0, 0)}
    prev = {start: -1}
    heap = [(0, 0, start)]
    while heap:
        d, na, u = heapq.heappop(heap)
        if (d, na) > best.get(u, unreached):
            continue
        if u == goal:
            break
        for v, b in mol.neighbors(u):
            if b is closure:
                continue
            cost = (d + 1, na + (0 if mol.atoms[v].aromatic else 1))
            if cost < best.get(v, unreached):
                best[v] = cost
                prev[v] = u
                heapq.heappush(heap, (cost[0], cost[1], v))
    if goal not in prev:
        return None
    path = [goal]
    while path[-1] != start:
        path.append(prev[path[-1]])
    return path


def _perceive_rings(mol: ParsedMol) -> list[list[int]]:
    """Minimum-basis ring set: shortest cycle through every bond, greedily
    selected under GF(2) edge-space independence up to the cyclomatic number.

    Per-closure-digit cycles alone misassign fused systems written in the
    interleaved style (both digits of an indole would claim the pyrrole
    ring); a small cycle basis recovers one ring per independent cycle.
    """
    n_atoms = len(mol.atoms)
    if not n_atoms:
        return []
    seen = set()
    components = 0
    for i in range(n_atoms):
        if i in seen:
            continue
        components += 1
        stack = [i]
        seen.add(i)
        while stack:
            u = stack.pop()
            for v, _ in mol.neighbors(u):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
    rank = len(mol.bonds) - n_atoms + components
    if rank <= 0:
        return []

    edge_index = {frozenset((b.a, b.b)): i for i, b in enumerate(mol.bonds)}
    candidates = []
    dedupe = set()
    for i in range(len(mol.bonds)):
        cycle = _shortest_cycle(mol, i)
        if cycle is None:
            continue
        key = frozenset(cycle)
        if key in dedupe:
            continue
        dedupe.add(key)
        mask = 0
        for k in range(len(cycle)):
            mask |= 1 << edge_index[frozenset((cycle[k], cycle[(k + 1) % len(cycle)]))]
        non_aromatic = sum(1 for a in cycle if not mol.atoms[a].aromatic)
        candidates.append((len(cycle), non_aromatic, tuple(sorted(cycle)), mask, cycle))
    candidates.sort(key=lambda c: c[:3])

    basis: dict[int, int] = {}  # high bit -> reduced mask
    rings: list[list[int]] = []
    for _, _, _, mask, cycle in candidates:
        v = mask
        while v:
            hb = v.bit_length() - 1
            if hb not in basis:
                basis[hb] = v
                rings.append(cycle)
                break
            v ^= basis[hb]
        if len(rings) == rank:
            break
    return rings


def parse_validate(tokens: TokenSeq) -> ParsedMol:
    """Build a ParsedMol or raise the first violated rule with its position.

    Grammar errors discovered at end of input (unclosed rings/branches,
    trailing bonds) are reported at the earliest offending token.
    """
    atoms: list[Atom] = []
    bonds: list[Bond] = []
    ring_open: dict[int, tuple[int, float | None, str, int]] = {}
    branch_stack: list[tuple[int | None, int, int]] = []  # (prev, pos, atoms_seen)
    prev: int | None = None
    pending: tuple[float, str, int] | None = None  # (order, stereo, pos)

    def add_bond(a: int, b: int, order: float | None, stereo: str, closure: bool, pos: int):
        if a == b:
            raise RingBondError("ring closure to the same atom", pos)
        for existing in bonds:
            if {existing.a, existing.b} == {a, b}:
                raise RingBondError("duplicate bond between atoms", pos)
        if order is None:
            order = 1.5 if atoms[a].aromatic and atoms[b].aromatic else 1.0
        bonds.append(Bond(a, b, order, stereo, closure))

    for tok in tokens:
        if tok.kind is TokenKind.CONTROL:
            raise UnknownToken(f"control token {tok.text} inside molecule body", tok.pos)
        if tok.kind is TokenKind.ATOM:
            if tok.text.startswith("["):
                element, aromatic, chiral, hcount, charge = _parse_bracket(tok.text, tok.pos)
                atoms.append(Atom(element, aromatic, charge, hcount, True, chiral, tok.pos))
            else:
                aromatic = tok.text in AROMATIC_LETTER
                atoms.append(Atom(tok.text.capitalize() if aromatic else tok.text,
                                  aromatic, pos=tok.pos))
            idx = len(atoms) - 1
            if prev is not None:
                order, stereo = (pending[0], pending[1]) if pending else (None, "")
                add_bond(prev, idx, order, stereo, False, tok.pos)
            pending = None
            prev = idx
            if branch_stack:
                restore, bpos, seen = branch_stack[-1]
                branch_stack[-1] = (restore, bpos, seen + 1)
        elif tok.kind is TokenKind.BOND:
            if pending is not None:
                raise DanglingBond("two bond symbols in a row", pending[2])
            if prev is None:
                raise DanglingBond("bond with no preceding atom", tok.pos)
            pending = (_BOND_ORDER[tok.text], tok.text if tok.text in "/\\" else "", tok.pos)
        elif tok.kind is TokenKind.RING:
            if prev is None:
                raise DanglingBond("ring bond with no preceding atom", tok.pos)
            digit = int(tok.text.lstrip("%"))
            if digit in ring_open:
                open_idx, open_order, open_stereo, _ = ring_open.pop(digit)
                order = pending[0] if pending else open_order
                if pending and open_order is not None and pending[0] != open_order:
                    raise RingBondError(f"conflicting orders for ring {digit}", tok.pos)
                stereo = pending[1] if pending else open_stereo
                add_bond(open_idx, prev, order, stereo, True, tok.pos)
            else:
                ring_open[digit] = (prev, pending[0] if pending else None,
                                    pending[1] if pending else "", tok.pos)
            pending = None
        elif tok.kind is TokenKind.BRANCH_OPEN:
            if prev is None:
                raise UnbalancedBranch("branch with no preceding atom", tok.pos)
            if pending is not None:
                raise DanglingBond("bond symbol before '('", pending[2])
            branch_stack.append((prev, tok.pos, 0))
        elif tok.kind is TokenKind.BRANCH_CLOSE:
            if not branch_stack:
                raise UnbalancedBranch("')' without matching '('", tok.pos)
            if pending is not None:
                raise DanglingBond("bond symbol before ')'", pending[2])
            restore, bpos, seen = branch_stack.pop()
            if seen == 0:
                raise UnbalancedBranch("empty branch", tok.pos)
            prev = restore
        elif tok.kind is TokenKind.DOT:
            if pending is not None:
                raise DanglingBond("bond symbol before '.'", pending[2])
            prev = None

    # End-of-input checks, reported at the earliest offending token.
    leftovers: list[tuple[int, ChemError]] = []
    if pending is not None:
        leftovers.append((pending[2], DanglingBond("trailing bond symbol", pending[2])))
    if branch_stack:
        bpos = min(p for _, p, _ in branch_stack)
        leftovers.append((bpos, UnbalancedBranch("unclosed branch", bpos)))
    for digit, (_, _, _, rpos) in ring_open.items():
        leftovers.append((rpos, UnclosedRing(f"ring {digit} never closed", rpos, digit)))
    if leftovers:
        leftovers.sort(key=lambda item: item[0])
        raise leftovers[0][1]
    if not atoms:
        raise EmptyMolecule("no atoms")

    mol = ParsedMol(atoms, bonds, smiles=detokenize(tokens))

    mol.rings = _perceive_rings(mol)
    ring_edges = set()
    for cycle in mol.rings:
        for k in range(len(cycle)):
            ring_edges.add(frozenset((cycle[k], cycle[(k + 1) % len(cycle)])))
    for bond in mol.bonds:
        bond.in_ring = frozenset((bond.a, bond.b)) in ring_edges

    # An aromatic-aromatic bond outside any ring is a plain single bond
    # (biphenyl linkage); demote before valence accounting.
    for b in mol.bonds:
        if b.order == 1.5 and not b.in_ring:
            b.order = 1.0

    aromatic_ring_members = set()
    for cycle in mol.rings:
        if len(cycle) in (5, 6) and all(mol.atoms[k].aromatic for k in cycle):
            aromatic_ring_members.update(cycle)
    for i, atom in enumerate(mol.atoms):
        if atom.aromatic and i not in aromatic_ring_members:
            raise AromaticityError(
                "aromatic atom outside a closed aromatic 5- or 6-ring", atom.pos)

    for i, atom in enumerate(mol.atoms):
        total = mol.sigma_order_sum(i) + atom.explicit_h
        if total > max_valence(atom.element, atom.charge):
            raise ValenceExceeded(
                f"{atom.element} with bond order {total}", atom.pos, i)

    return mol


def validate_smiles(text: str) -> ParsedMol:
    return parse_validate(tokenize(text))


def try_parse(text: str):
    """(mol, None) on success, (None, error) on any tokenizer/validator failure."""
    try:
        return validate_smiles(text), None
    except ChemError as err:
        return None, err


# --- descriptors -------------------------------------------------------------


@dataclass(frozen=True)
class DescriptorSet:
    heavy_atoms: int
    ring_count: int
    max_ring_size: int
    bridgehead_count: int
    approx_mw: float
    rotatable_proxy: int
    hbd_proxy: int
    hba_proxy: int
    tpsa_proxy: float
    logp_proxy: float
    element_set: frozenset
    charge_total: int
    radical_flag: bool


def implicit_h(mol: ParsedMol, i: int) -> int:
    """Implicit hydrogens on atom ``i``.

    Bare organic-subset atoms fill up to the smallest standard valence that
    covers their bond-order sum (aromatic bonds at 1.5, summed then rounded
    up).  Bracket atoms carry their hydrogens explicitly.
    """
    atom = mol.atoms[i]
    if atom.bracket or atom.element not in IMPLICIT_VALENCES:
        return 0
    used = -(-int(mol.bond_order_sum(i) * 2) // 2)  # ceil of the 1.5-sum
    for valence in IMPLICIT_VALENCES[atom.element]:
        if valence >= used:
            return valence - used
    return 0


def _bridgeheads(mol: ParsedMol) -> int:
    """Atoms shared by two rings that overlap in 3+ atoms and that carry
    3+ ring bonds.  Fused (2-atom overlap) and spiro systems contribute none."""
    ring_degree = [0] * len(mol.atoms)
    for b in mol.bonds:
        if b.in_ring:
            ring_degree[b.a] += 1
            ring_degree[b.b] += 1
    found = set()
    cycles = [set(c) for c in mol.rings]
    for i in range(len(cycles)):
        for j in range(i + 1, len(cycles)):
            shared = cycles[i] & cycles[j]
            if len(shared) >= 3:
                found.update(k for k in shared if ring_degree[k] >= 3)
    return len(found)


def descriptors(mol: ParsedMol) -> DescriptorSet:
    heavy = [i for i, a in enumerate(mol.atoms) if a.element != "H"]
    hydrogens = sum(a.explicit_h for a in mol.atoms)
    hydrogens += sum(1 for a in mol.atoms if a.element == "H")
    hydrogens += sum(implicit_h(mol, i) for i in range(len(mol.atoms)))
    mw = sum(ATOMIC_WEIGHTS[mol.atoms[i].element] for i in heavy)
    mw += 1.008 * hydrogens

    heavy_degree = [0] * len(mol.atoms)
    for b in mol.bonds:
        if mol.atoms[b.a].element != "H" and mol.atoms[b.b].element != "H":
            heavy_degree[b.a] += 1
            heavy_degree[b.b] += 1
    rotatable = sum(
        1 for b in mol.bonds
        if b.order == 1.0 and not b.in_ring
        and mol.atoms[b.a].element != "H" and mol.atoms[b.b].element != "H"
        and heavy_degree[b.a] >= 2 and heavy_degree[b.b] >= 2)

    n_count = sum(1 for a in mol.atoms if a.element == "N")
    o_count = sum(1 for a in mol.atoms if a.element == "O")
    hbd = sum(
        1 for i, a in enumerate(mol.atoms)
        if a.element in ("N", "O") and (a.explicit_h + implicit_h(mol, i)) > 0)
    c_count = sum(1 for a in mol.atoms if a.element == "C")
    halogen_count = sum(1 for a in mol.atoms if a.element in HALOGENS)

    return DescriptorSet(
        heavy_atoms=len(heavy),
        ring_count=len(mol.rings),
        max_ring_size=max((len(c) for c in mol.rings), default=0),
        bridgehead_count=_bridgeheads(mol),
        approx_mw=mw,
        rotatable_proxy=rotatable,
        hbd_proxy=hbd,
        hba_proxy=n_count + o_count,
        tpsa_proxy=20.2 * n_count + 17.1 * o_count,
        logp_proxy=0.5 * c_count - 1.0 * (n_count + o_count) + 0.8 * halogen_count,
        element_set=frozenset(a.element for a in mol.atoms),
        charge_total=sum(a.charge for a in mol.atoms),
        radical_flag=False,  # the grammar cannot express radical centers
    )


# --- fingerprints ------------------------------------------------------------

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_FP_SEED = 0x5EEDBA5E  # fixed so fingerprints are stable across runs/processes

DEFAULT_FP_WIDTH = 2048
MIN_FP_WIDTH = 256
_MAX_PATH_BONDS = 3


def fnv1a64(data: bytes, seed: int = _FP_SEED) -> int:
    h = (_FNV_OFFSET ^ seed) & 0xFFFFFFFFFFFFFFFF
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class Fingerprint:
    bits: int
    width: int

    @property
    def set_count(self) -> int:
        return self.bits.bit_count()


def _atom_label(atom: Atom) -> str:
    label = atom.element.lower() if atom.aromatic else atom.element
    if atom.charge:
        label += f"{atom.charge:+d}"
    return label


def _bond_label(bond: Bond) -> str:
    return {1.0: "-", 1.5: ":", 2.0: "=", 3.0: "#"}[bond.order]


def fingerprint(mol: ParsedMol, width: int = DEFAULT_FP_WIDTH) -> Fingerprint:
    """Hashed linear paths of 0..3 bonds.

    Each simple path is labeled atom/bond/atom/..., canonicalized to the
    lexicographically smaller direction, and hashed with seeded FNV-1a.
    """
    if width < MIN_FP_WIDTH or width & (width - 1):
        raise ValueError(f"width must be a power of two >= {MIN_FP_WIDTH}")
    adjacency: list[list[tuple[int, Bond]]] = [[] for _ in mol.atoms]
    for b in mol.bonds:
        adjacency[b.a].append((b.b, b))
        adjacency[b.b].append((b.a, b))

    paths: set[tuple[str, ...]] = set()

    def walk(atom_idx: int, labels: list[str], visited: set):
        forward = tuple(labels)
        paths.add(min(forward, forward[::-1]))
        if len(visited) > _MAX_PATH_BONDS:
            return
        for nxt, bond in adjacency[atom_idx]:
            if nxt in visited:
                continue
            walk(nxt, labels + [_bond_label(bond), _atom_label(mol.atoms[nxt])],
                 visited | {nxt})

    for i in range(len(mol.atoms)):
        walk(i, [_atom_label(mol.atoms[i])], {i})

    bits = 0
    for path in paths:
        bits |= 1 << (fnv1a64("|".join(path).encode()) % width)
    return Fingerprint(bits, width)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|a AND b| / |a OR b|; defined as 1.0 when both fingerprints are empty."""
    if a.width != b.width:
        raise WidthMismatch(f"fingerprint widths differ: {a.width} != {b.width}")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union


# --- vocabulary ---------------------------------------------------------------


@dataclass(frozen=True)
class Vocab:
    """Token-surface vocabulary with the four control tokens pinned first."""

    tokens: tuple

    PAD_ID = 0
    BOS_ID = 1
    EOS_ID = 2
    MASK_ID = 3

    def __post_init__(self):
        if tuple(self.tokens[:4]) != (PAD, BOS, EOS, MASK):
            raise ValueError("vocabulary must start with PAD, BOS, EOS, MASK")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def build(cls, token_lists) -> "Vocab":
        body = sorted({t.text if isinstance(t, Token) else t
                       for tokens in token_lists for t in tokens})
        return cls(tuple(CONTROL_TOKENS) + tuple(b for b in body if b not in CONTROL_TOKENS))

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, text: str) -> int:
        try:
            return self._index[text]
        except KeyError:
            raise UnknownToken(f"token {text!r} not in vocabulary") from None

    def encode(self, tokens) -> list[int]:
        return [self.id(t.text if isinstance(t, Token) else t) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids]

    def content_hash(self) -> str:
        return f"{fnv1a64(chr(0).join(self.tokens).encode()):016x}"
