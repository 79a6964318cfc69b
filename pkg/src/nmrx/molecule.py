"""Molecule graphs, symmetry groups, lookup shift prediction and spectrum simulation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Sequence

from . import schema
from .errors import (Disconnected, InvariantViolation, MalformedDocument,
                     SitesNotPredicted, UnknownEnvironmentClass)

BOND_ORDERS = (1, 2, 3, "aromatic")
VALENCE = {"C": 4, "N": 3, "O": 2, "S": 2, "F": 1, "Cl": 1, "Br": 1, "I": 1}
EXCHANGEABLE = ("O", "N", "S")


def bond_valence(order) -> float:
    return 1.5 if order == "aromatic" else float(order)


@dataclass(frozen=True)
class Atom:
    element: str
    attached_hydrogens: int = 0
    environment_class: str = ""

    def __post_init__(self):
        if not isinstance(self.attached_hydrogens, int) or self.attached_hydrogens < 0:
            raise InvariantViolation("attached_hydrogens must be a non-negative integer")


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: object = 1

    def __post_init__(self):
        if self.order not in BOND_ORDERS:
            raise InvariantViolation(f"bond order must be one of {BOND_ORDERS}")


@dataclass(frozen=True)
class Dihedral:
    path: tuple
    theta_deg: float


@dataclass(frozen=True)
class MoleculeGraph:
    """Heavy-atom graph; hydrogens are implicit counts on their parent atoms."""

    atoms: tuple
    bonds: tuple = ()
    dihedrals: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "bonds", tuple(self.bonds))
        object.__setattr__(self, "dihedrals", tuple(self.dihedrals))
        n = len(self.atoms)
        if n == 0:
            raise InvariantViolation("molecule has no atoms")
        seen = set()
        for bd in self.bonds:
            if not (0 <= bd.a < n and 0 <= bd.b < n):
                raise InvariantViolation(f"bond endpoint out of range: {bd.a}-{bd.b}")
            if bd.a == bd.b:
                raise InvariantViolation(f"self-bond on atom {bd.a}")
            key = (min(bd.a, bd.b), max(bd.a, bd.b))
            if key in seen:
                raise InvariantViolation(f"duplicate bond {key}")
            seen.add(key)
        for dh in self.dihedrals:
            if len(dh.path) != 4 or not all(0 <= i < n for i in dh.path):
                raise InvariantViolation("dihedral path must name 4 atoms")
        # connectivity
        adj = self.adjacency()
        stack, reached = [0], {0}
        while stack:
            v = stack.pop()
            for u, _ in adj[v]:
                if u not in reached:
                    reached.add(u)
                    stack.append(u)
        if len(reached) != n:
            raise Disconnected(f"molecule graph has {n - len(reached)} atom(s) unreachable from atom 0")

    def adjacency(self):
        adj = [[] for _ in self.atoms]
        for bd in self.bonds:
            adj[bd.a].append((bd.b, bd.order))
            adj[bd.b].append((bd.a, bd.order))
        return adj

    def bond_order(self, a, b):
        for bd in self.bonds:
            if {bd.a, bd.b} == {a, b}:
                return bd.order
        return None

    def used_valence(self, i) -> float:
        return self.atoms[i].attached_hydrogens + sum(bond_valence(o) for _, o in self.adjacency()[i])

    @property
    def total_protons(self) -> int:
        return sum(a.attached_hydrogens for a in self.atoms)

    def to_dict(self):
        return {
            "atoms": [{"element": a.element, "attached_hydrogens": a.attached_hydrogens,
                       "environment_class": a.environment_class} for a in self.atoms],
            "bonds": [{"a": b.a, "b": b.b, "order": b.order} for b in self.bonds],
            "dihedrals": [{"path": list(d.path), "theta_deg": d.theta_deg} for d in self.dihedrals],
        }

    @classmethod
    def from_dict(cls, d) -> "MoleculeGraph":
        if not isinstance(d, dict):
            raise MalformedDocument("molecule graph must be an object")
        try:
            atoms = tuple(Atom(str(a["element"]), int(a.get("attached_hydrogens", 0)),
                               str(a.get("environment_class", ""))) for a in d["atoms"])
            bonds = tuple(Bond(int(b["a"]), int(b["b"]), b.get("order", 1)) for b in d.get("bonds", []))
            dih = tuple(Dihedral(tuple(int(i) for i in x["path"]), float(x["theta_deg"]))
                        for x in d.get("dihedrals", []))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDocument(f"bad molecule graph: {exc}") from None
        return cls(atoms, bonds, dih)


# --- symmetry -----------------------------------------------------------------

def refine_colors(graph: MoleculeGraph, max_rounds: int | None = None):
    """Colour refinement to a stable partition.

    Initial colour is (element, attached H, degree, environment class); each
    round recolours an atom by its colour plus the sorted multiset of
    (bond order, neighbour colour).  Colours are renumbered by sorting the
    signatures, so the result depends only on graph structure, not on atom
    numbering.  Returns ``(colors, rounds)``.
    """
    adj = graph.adjacency()
    sigs = [(a.element, a.attached_hydrogens, len(adj[i]), a.environment_class)
            for i, a in enumerate(graph.atoms)]
    colors = _renumber(sigs)
    n = len(graph.atoms)
    rounds = 0
    limit = n if max_rounds is None else max_rounds
    while rounds < limit:
        sigs = [(colors[v], tuple(sorted((str(o), colors[u]) for u, o in adj[v]))) for v in range(n)]
        new = _renumber(sigs)
        rounds += 1
        if len(set(new)) == len(set(colors)):
            colors = new
            break
        colors = new
    return colors, rounds


def _renumber(sigs):
    table = {s: k for k, s in enumerate(sorted(set(sigs), key=repr))}
    return [table[s] for s in sigs]


@dataclass(frozen=True)
class SiteGroup:
    atom_indices: tuple
    nucleus: str
    predicted_shift_ppm: float | None = None
    proton_count: int = 0
    expected_multiplicity: str = "s"
    predicted_j_hz: tuple = ()
    environment_class: str = ""

    def to_dict(self):
        return {
            "atom_indices": list(self.atom_indices), "nucleus": self.nucleus,
            "predicted_shift_ppm": self.predicted_shift_ppm, "proton_count": self.proton_count,
            "expected_multiplicity": self.expected_multiplicity,
            "predicted_j_hz": list(self.predicted_j_hz), "environment_class": self.environment_class,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["atom_indices"]), d["nucleus"], d.get("predicted_shift_ppm"),
                   int(d.get("proton_count", 0)), d.get("expected_multiplicity", "s"),
                   tuple(d.get("predicted_j_hz", ())), d.get("environment_class", ""))


def equivalence_groups(graph: MoleculeGraph, nucleus: str) -> list[SiteGroup]:
    """Symmetry-equivalent site groups for ``nucleus``.

    H1 groups contain atoms bearing hydrogens; C13 groups contain carbons.
    Groups are ordered by stable colour, which is numbering-independent.
    """
    colors, _ = refine_colors(graph)
    members: dict[int, list[int]] = {}
    for i, a in enumerate(graph.atoms):
        if nucleus == "H1" and a.attached_hydrogens > 0 or nucleus == "C13" and a.element == "C":
            members.setdefault(colors[i], []).append(i)
    groups = []
    for col in sorted(members):
        idx = tuple(sorted(members[col]))
        a0 = graph.atoms[idx[0]]
        groups.append(SiteGroup(
            atom_indices=idx, nucleus=nucleus,
            proton_count=sum(graph.atoms[i].attached_hydrogens for i in idx) if nucleus == "H1" else 0,
            environment_class=a0.environment_class,
        ))
    return groups


# --- shift prediction ---------------------------------------------------------

@dataclass(frozen=True)
class ShiftEntry:
    base_ppm: float
    increments: dict = field(default_factory=dict)
    element: str | None = None


@dataclass(frozen=True)
class ShiftTable:
    """Per-nucleus lookup: environment class -> base shift plus neighbour-class increments."""

    entries: dict
    default_j_hz: float = 7.0
    couplings: dict = field(default_factory=dict)  # "classA|classB" -> J (Hz)

    def shift(self, cls: str, neighbour_classes: Sequence[str]) -> float:
        e = self.entries[cls]
        return e.base_ppm + sum(e.increments.get(c, 0.0) for c in neighbour_classes)

    def coupling(self, c1: str, c2: str) -> float:
        return self.couplings.get(f"{c1}|{c2}", self.couplings.get(f"{c2}|{c1}", self.default_j_hz))

    def classes_for(self, element: str) -> list[str]:
        return sorted(k for k, e in self.entries.items() if e.element == element)

    @classmethod
    def from_dict(cls, d: dict) -> "ShiftTable":
        try:
            entries = {k: ShiftEntry(float(v["base_ppm"]), {a: float(b) for a, b in v.get("increments", {}).items()},
                                     v.get("element"))
                       for k, v in d.items() if not k.startswith("_")}
            meta = d.get("_meta", {})
            return cls(entries, float(meta.get("default_j_hz", 7.0)),
                       {k: float(v) for k, v in meta.get("couplings", {}).items()})
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise MalformedDocument(f"bad shift table: {exc}") from None


def load_shift_tables(path=None) -> dict:
    """Load ``{nucleus: ShiftTable}``.

    The file is either ``{"H1": {...}, "C13": {...}}`` or a single flat
    ``{class: {base_ppm, increments}}`` table, which is then used for H1.
    Without ``path`` the bundled table is loaded.
    """
    if path is None:
        text = resources.files("nmrx").joinpath("data/shift_table.json").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise MalformedDocument(f"shift table is not JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise MalformedDocument("shift table must be an object")
    if "H1" in doc or "C13" in doc:
        return {k: ShiftTable.from_dict(v) for k, v in doc.items() if k in ("H1", "C13")}
    return {"H1": ShiftTable.from_dict(doc)}


def predict_shifts(graph: MoleculeGraph, table: ShiftTable, nucleus: str = "H1",
                   groups: list[SiteGroup] | None = None) -> list[SiteGroup]:
    """Fill ``predicted_shift_ppm`` for each site group.

    Shift = base(class) + sum of increments keyed by the classes of bonded
    atoms.  Raises :class:`UnknownEnvironmentClass` listing every class the
    table lacks.
    """
    groups = equivalence_groups(graph, nucleus) if groups is None else groups
    adj = graph.adjacency()
    needed = {graph.atoms[i].environment_class for g in groups for i in g.atom_indices}
    missing = needed - set(table.entries)
    if missing:
        raise UnknownEnvironmentClass(missing)
    out = []
    for g in groups:
        vals = [table.shift(graph.atoms[i].environment_class,
                            [graph.atoms[u].environment_class for u, _ in adj[i]])
                for i in g.atom_indices]
        out.append(replace(g, predicted_shift_ppm=float(sum(vals) / len(vals))))
    return out


def karplus_j(theta_deg: float, A: float = 7.0, B: float = -1.0, C: float = 5.0) -> float:
    """Three-bond coupling J = A cos^2(theta) + B cos(theta) + C (Hz).

    The angle is folded into [0, 180] first (``remainder`` is exact), so
    theta, -theta and theta + 360 k give bit-identical results.
    """
    c = math.cos(math.radians(abs(math.remainder(theta_deg, 360.0))))
    return A * c * c + B * c + C


# --- candidates and simulation ------------------------------------------------

PROVENANCE = ("generated", "searched", "repaired", "input")


@dataclass(frozen=True)
class CandidateStructure:
    id: str
    graph: MoleculeGraph
    h_sites: tuple = ()
    c_sites: tuple = ()
    provenance: str = "input"

    def __post_init__(self):
        if self.provenance not in PROVENANCE:
            raise InvariantViolation(f"provenance must be one of {PROVENANCE}")
        object.__setattr__(self, "h_sites", tuple(self.h_sites))
        object.__setattr__(self, "c_sites", tuple(self.c_sites))

    def sites(self, nucleus):
        return self.h_sites if nucleus == "H1" else self.c_sites

    def to_dict(self):
        return {
            "schema": schema.tag("molecule"), "id": self.id, "provenance": self.provenance,
            "graph": self.graph.to_dict(),
            "h_sites": [s.to_dict() for s in self.h_sites],
            "c_sites": [s.to_dict() for s in self.c_sites],
        }

    @classmethod
    def from_dict(cls, d) -> "CandidateStructure":
        if not isinstance(d, dict):
            raise MalformedDocument("candidate must be an object")
        schema.check(d, "molecule", required=False)
        try:
            return cls(str(d["id"]), MoleculeGraph.from_dict(d["graph"]),
                       tuple(SiteGroup.from_dict(s) for s in d.get("h_sites", [])),
                       tuple(SiteGroup.from_dict(s) for s in d.get("c_sites", [])),
                       d.get("provenance", "input"))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDocument(f"bad candidate: {exc}") from None


def _dihedral_lookup(graph):
    out = {}
    for d in graph.dihedrals:
        _, b, c, _ = d.path
        out[(b, c)] = out[(c, b)] = d.theta_deg
    return out


def _couplings(graph: MoleculeGraph, groups, table: ShiftTable, karplus=(7.0, -1.0, 5.0)):
    """Per H group: list of (neighbour proton count, J) for vicinal H-C-C-H couplings."""
    adj = graph.adjacency()
    where = {i: k for k, g in enumerate(groups) for i in g.atom_indices}
    dih = _dihedral_lookup(graph)
    result = []
    for g in groups:
        i0 = g.atom_indices[0]
        if graph.atoms[i0].element in EXCHANGEABLE:
            result.append([])
            continue
        # symmetric members see equivalent neighbourhoods, so one representative suffices
        per_group: dict[int, list] = {}
        for u, _ in adj[i0]:
            au = graph.atoms[u]
            if au.attached_hydrogens == 0 or au.element in EXCHANGEABLE or u in g.atom_indices:
                continue
            if (i0, u) in dih:
                j = karplus_j(dih[(i0, u)], *karplus)
            else:
                j = table.coupling(graph.atoms[i0].environment_class, au.environment_class)
            per_group.setdefault(where.get(u, -1), []).append((au.attached_hydrogens, j))
        couplings = []
        for k in sorted(per_group):
            items = per_group[k]
            count = sum(c for c, _ in items)
            couplings.append((count, sum(c * j for c, j in items) / count))
        result.append(couplings)
    return result


def _pattern_from_couplings(couplings, merge_hz=0.5):
    """First-order multiplicity from (count, J) pairs; returns (pattern, J list descending)."""
    merged: list[list] = []
    for count, j in sorted(couplings, key=lambda c: -c[1]):
        if merged and abs(merged[-1][1] - j) < merge_hz:
            tot = merged[-1][0] + count
            merged[-1][1] = (merged[-1][1] * merged[-1][0] + j * count) / tot
            merged[-1][0] = tot
        else:
            merged.append([count, j])
    merged = [m for m in merged if m[0] > 0]
    if not merged:
        return "s", ()
    counts = tuple(m[0] for m in merged)
    js = tuple(round(m[1], 3) for m in merged)
    single = {1: "d", 2: "t", 3: "q"}
    if len(merged) == 1:
        return (single[counts[0]], js) if counts[0] in single else ("m", ())
    if counts == (1, 1):
        return "dd", js
    if counts == (2, 1):
        return "td", js
    if counts == (1, 2):
        return "dt", js
    if counts == (1, 1, 1):
        return "ddd", js
    return "m", ()


def build_candidate(cid: str, graph: MoleculeGraph, tables: dict, provenance: str = "input",
                    karplus=(7.0, -1.0, 5.0)) -> CandidateStructure:
    """Group sites, predict shifts for both nuclei and attach expected multiplets."""
    h = predict_shifts(graph, tables["H1"], "H1")
    pats = _couplings(graph, h, tables["H1"], karplus)
    h = [replace(g, expected_multiplicity=p, predicted_j_hz=js)
         for g, (p, js) in zip(h, (_pattern_from_couplings(c) for c in pats))]
    c = predict_shifts(graph, tables["C13"], "C13") if "C13" in tables else []
    return CandidateStructure(cid, graph, tuple(h), tuple(c), provenance)


@dataclass(frozen=True)
class Signal:
    shift_ppm: float
    multiplicity: str = "s"
    j_hz: tuple = ()
    weight: float = 1.0

    def to_dict(self):
        return {"shift_ppm": self.shift_ppm, "multiplicity": self.multiplicity,
                "j_hz": list(self.j_hz), "weight": self.weight}


@dataclass(frozen=True)
class SignalSet:
    signals: tuple
    nucleus: str

    def __post_init__(self):
        sig = tuple(sorted(self.signals, key=lambda s: (-s.shift_ppm, s.multiplicity, s.weight)))
        for s in sig:
            if not math.isfinite(s.shift_ppm):
                raise InvariantViolation("signal shifts must be finite")
            if not s.weight > 0:
                raise InvariantViolation("signal weights must be positive")
        object.__setattr__(self, "signals", sig)

    def __len__(self):
        return len(self.signals)

    @property
    def total_weight(self) -> float:
        return float(sum(s.weight for s in self.signals))

    def to_dict(self):
        return {"nucleus": self.nucleus, "signals": [s.to_dict() for s in self.signals]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Signal(float(s["shift_ppm"]), s.get("multiplicity", "s"),
                                tuple(s.get("j_hz", ())), float(s.get("weight", 1.0)))
                         for s in d["signals"]), d["nucleus"])


def simulate_spectrum(candidate: CandidateStructure, nucleus: str = "H1") -> SignalSet:
    """Predicted signal list: one entry per site group, weight = proton count (1 for carbon).

    Raises
    ------
    SitesNotPredicted
        The candidate has no sites for ``nucleus`` or a site lacks a shift.
    """
    sites = candidate.sites(nucleus)
    if not sites or any(s.predicted_shift_ppm is None for s in sites):
        raise SitesNotPredicted(f"candidate {candidate.id!r} has no predicted {nucleus} sites")
    if nucleus == "H1":
        sig = [Signal(s.predicted_shift_ppm, s.expected_multiplicity, tuple(s.predicted_j_hz),
                      float(s.proton_count)) for s in sites]
    else:
        sig = [Signal(s.predicted_shift_ppm, "s", (), 1.0) for s in sites]
    return SignalSet(tuple(sig), nucleus)


def signals_from_annotated(annotated) -> SignalSet:
    """Observed signals of an annotated spectrum as a SignalSet."""
    nuc = annotated.params.nucleus
    return SignalSet(tuple(
        Signal(m.center_ppm, m.pattern, tuple(m.j_values_hz),
               float(m.integral_protons) if nuc == "H1" else 1.0)
        for m in annotated.multiplets), nuc)
