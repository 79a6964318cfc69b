"""Spectrum similarity, vector retrieval, the candidate database and local-edit repair."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import (EmptyDatabase, InvariantViolation, MalformedDocument, NoLegalEdits,
                     NmrxError, NucleusMismatch, SchemaVersionError)
from .molecule import (VALENCE, Atom, Bond, CandidateStructure, Dihedral, MoleculeGraph,
                       SignalSet, build_candidate, simulate_spectrum)

VECTOR_BINS = 256
WINDOWS = {"H1": (-1.0, 13.0), "C13": (-10.0, 230.0)}
DEFAULT_TOL = {"H1": 0.05, "C13": 1.0}


# --- similarity ---------------------------------------------------------------

def _compatible(m1: str, m2: str) -> bool:
    return m1 == m2 or m1 == "m" or m2 == "m"


def _sig_key(s):
    return (s.shift_ppm, s.weight, s.multiplicity)


def peak_set_similarity(a: SignalSet, b: SignalSet, tol_ppm: float | None = None) -> float:
    """Greedy nearest-shift set similarity ``2 W_match / (W_a + W_b)``.

    Candidate pairs within ``tol_ppm`` are taken in increasing ``|d delta|``;
    each signal is used at most once and a pair contributes the smaller of its
    two weights, halved when the multiplicities disagree (``m`` agrees with
    anything).  Equal-distance pairs are ordered by a key symmetric in the two
    sides, so ``Sim(a, b) == Sim(b, a)`` exactly.
    """
    if a.nucleus != b.nucleus:
        raise NucleusMismatch(f"{a.nucleus} vs {b.nucleus}")
    tol = DEFAULT_TOL.get(a.nucleus, 0.05) if tol_ppm is None else tol_ppm
    if not tol > 0:
        raise InvariantViolation("tol_ppm must be positive")
    total = a.total_weight + b.total_weight
    if total == 0:
        return 0.0
    pairs = []
    for i, sa in enumerate(a.signals):
        for j, sb in enumerate(b.signals):
            d = abs(sa.shift_ppm - sb.shift_ppm)
            if d <= tol:
                pairs.append((d, tuple(sorted((_sig_key(sa), _sig_key(sb)))), i, j))
    pairs.sort(key=lambda p: (p[0], p[1]))
    used_a, used_b = set(), set()
    matched = 0.0
    for _, _, i, j in pairs:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        sa, sb = a.signals[i], b.signals[j]
        w = min(sa.weight, sb.weight)
        matched += w if _compatible(sa.multiplicity, sb.multiplicity) else 0.5 * w
    return min(1.0, 2.0 * matched / total)


# --- vectors ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectrumVector:
    bins: np.ndarray
    nucleus: str

    def __eq__(self, other):
        return (isinstance(other, SpectrumVector) and self.nucleus == other.nucleus
                and np.array_equal(self.bins, other.bins))


def spectrum_vector(signals: SignalSet, n_bins: int = VECTOR_BINS) -> SpectrumVector:
    """Weighted histogram over the nucleus window, Gaussian-smeared (sigma 1 bin), L2-normalised.

    Shifts outside the window land in the edge bins.
    """
    lo, hi = WINDOWS[signals.nucleus]
    h = np.zeros(n_bins)
    for s in signals.signals:
        k = int(math.floor((s.shift_ppm - lo) / (hi - lo) * n_bins))
        h[min(max(k, 0), n_bins - 1)] += s.weight
    h = gaussian_filter1d(h, 1.0, mode="constant", truncate=4.0)
    norm = float(np.linalg.norm(h))
    return SpectrumVector(h / norm if norm > 0 else h, signals.nucleus)


def cosine(u: SpectrumVector, v: SpectrumVector) -> float:
    return float(np.dot(u.bins, v.bins))


# --- database -----------------------------------------------------------------

DB_MAGIC = b"NMRXDB\x00\x01"
DB_VERSION = 1
_HEADER = struct.Struct("<8sIIIQ")  # magic, version, n_entries, n_bins, metadata length


@dataclass(frozen=True, eq=False)
class DatabaseEntry:
    candidate: CandidateStructure
    h_signals: SignalSet
    c_signals: SignalSet
    vector_h: SpectrumVector
    vector_c: SpectrumVector

    def signals(self, nucleus):
        return self.h_signals if nucleus == "H1" else self.c_signals

    def vector(self, nucleus):
        return self.vector_h if nucleus == "H1" else self.vector_c


def make_entry(candidate: CandidateStructure, n_bins: int = VECTOR_BINS) -> DatabaseEntry:
    h = simulate_spectrum(candidate, "H1")
    c = simulate_spectrum(candidate, "C13") if candidate.c_sites else SignalSet((), "C13")
    return DatabaseEntry(candidate, h, c, spectrum_vector(h, n_bins), spectrum_vector(c, n_bins))


class CandidateDatabase:
    """Read-only collection of candidates with precomputed signals and vectors.

    Binary layout (all little-endian): 8-byte magic ``NMRXDB\\0\\1``, u32
    format version, u32 entry count, u32 vector length, u64 length of a UTF-8
    JSON metadata block (candidates and signal sets), the metadata block, then
    for every entry the H1 vector followed by the C13 vector as f64.
    """

    def __init__(self, entries: Sequence[DatabaseEntry]):
        self._entries = tuple(entries)
        ids = [e.candidate.id for e in self._entries]
        if len(set(ids)) != len(ids):
            raise InvariantViolation("database candidate ids must be unique")

    @property
    def entries(self):
        return self._entries

    def __len__(self):
        return len(self._entries)

    def by_id(self, cid):
        for e in self._entries:
            if e.candidate.id == cid:
                return e
        raise KeyError(cid)

    @classmethod
    def build(cls, candidates: Sequence[CandidateStructure], n_bins: int = VECTOR_BINS) -> "CandidateDatabase":
        return cls([make_entry(replace(c, provenance="searched"), n_bins) for c in candidates])

    @classmethod
    def build_from_dir(cls, directory, tables, n_bins: int = VECTOR_BINS) -> "CandidateDatabase":
        """Each ``*.json`` file holds a candidate document; sites are (re)predicted from ``tables``."""
        paths = sorted(Path(directory).glob("*.json"))
        if not paths:
            raise EmptyDatabase(f"no candidate files in {directory}")
        return cls.build([load_candidate(p, tables) for p in paths], n_bins)

    def to_bytes(self) -> bytes:
        n_bins = len(self._entries[0].vector_h.bins) if self._entries else VECTOR_BINS
        meta = json.dumps([{"candidate": e.candidate.to_dict(), "h_signals": e.h_signals.to_dict(),
                            "c_signals": e.c_signals.to_dict()} for e in self._entries],
                          sort_keys=True).encode()
        vecs = np.concatenate([np.concatenate([e.vector_h.bins, e.vector_c.bins]) for e in self._entries]) \
            if self._entries else np.zeros(0)
        return (_HEADER.pack(DB_MAGIC, DB_VERSION, len(self._entries), n_bins, len(meta)) + meta
                + vecs.astype("<f8").tobytes())

    @classmethod
    def from_bytes(cls, blob: bytes, verify: bool = True) -> "CandidateDatabase":
        if len(blob) < _HEADER.size:
            raise MalformedDocument("database file truncated")
        magic, version, n, n_bins, mlen = _HEADER.unpack_from(blob)
        if magic != DB_MAGIC:
            raise MalformedDocument("not an nmrx database (bad magic)")
        if version != DB_VERSION:
            raise SchemaVersionError(f"database format version {version}, expected {DB_VERSION}")
        body = blob[_HEADER.size:]
        if len(body) != mlen + 8 * 2 * n * n_bins:
            raise MalformedDocument("database file size does not match its header")
        try:
            meta = json.loads(body[:mlen])
            vecs = np.frombuffer(body[mlen:], dtype="<f8").reshape(n, 2, n_bins)
            entries = []
            for k, m in enumerate(meta):
                e = DatabaseEntry(CandidateStructure.from_dict(m["candidate"]),
                                  SignalSet.from_dict(m["h_signals"]), SignalSet.from_dict(m["c_signals"]),
                                  SpectrumVector(vecs[k, 0].copy(), "H1"), SpectrumVector(vecs[k, 1].copy(), "C13"))
                entries.append(e)
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedDocument(f"bad database metadata: {exc}") from None
        if len(entries) != n:
            raise MalformedDocument("entry count does not match header")
        if verify:
            for e in entries:
                if not (np.array_equal(spectrum_vector(e.h_signals, n_bins).bins, e.vector_h.bins)
                        and np.array_equal(spectrum_vector(e.c_signals, n_bins).bins, e.vector_c.bins)):
                    raise MalformedDocument(f"stored vectors of {e.candidate.id!r} do not match its signals")
        return cls(entries)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "CandidateDatabase":
        return cls.from_bytes(Path(path).read_bytes())


def load_candidate(path, tables) -> CandidateStructure:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise MalformedDocument(f"{path}: {exc}") from None
    cand = CandidateStructure.from_dict(doc)
    return build_candidate(cand.id, cand.graph, tables, cand.provenance)


# --- search -------------------------------------------------------------------

@dataclass(frozen=True)
class SearchHit:
    candidate: CandidateStructure
    sim: float
    cosine: float

    def to_dict(self):
        return {"id": self.candidate.id, "sim": self.sim, "cosine": self.cosine}


def _as_query(query) -> dict:
    if isinstance(query, SignalSet):
        return {query.nucleus: query}
    q = {s.nucleus: s for s in query}
    if not q:
        raise InvariantViolation("query holds no signal sets")
    return q


def query_similarity(query, entry: DatabaseEntry, tol: dict | None = None) -> float:
    q = _as_query(query)
    tol = tol or {}
    return float(np.mean([peak_set_similarity(s, entry.signals(n), tol.get(n)) for n, s in sorted(q.items())]))


def search_two_stage(query, db: CandidateDatabase, coarse_k: int = 50, k: int = 10,
                     tol: dict | None = None) -> list[SearchHit]:
    """Cosine pre-selection of ``coarse_k`` entries, then peak-set similarity rerank to ``k``.

    ``query`` is a SignalSet or an iterable of them (joint H1/C13, scores averaged).
    Ties break by candidate id ascending in both stages.
    """
    if len(db) == 0:
        raise EmptyDatabase("database has no entries")
    if k < 1 or coarse_k < k:
        raise InvariantViolation("need 1 <= k <= coarse_k")
    q = _as_query(query)
    n_bins = len(db.entries[0].vector_h.bins)
    qv = {n: spectrum_vector(s, n_bins) for n, s in q.items()}
    coarse = []
    for e in db.entries:
        cos = float(np.mean([cosine(qv[n], e.vector(n)) for n in sorted(qv)]))
        coarse.append((cos, e))
    coarse.sort(key=lambda t: (-t[0], t[1].candidate.id))
    fine = [SearchHit(e.candidate, query_similarity(q.values(), e, tol), cos) for cos, e in coarse[:coarse_k]]
    fine.sort(key=lambda h: (-h.sim, h.candidate.id))
    return fine[:k]


# --- repair -------------------------------------------------------------------

@dataclass(frozen=True)
class Edit:
    kind: str  # "class", "bond", "methyl+", "methyl-"
    atom: int
    other: int = -1
    value: object = None

    def descriptor(self) -> str:
        if self.kind == "class":
            return f"class:{self.atom:04d}:{self.value}"
        if self.kind == "bond":
            return f"bond:{self.atom:04d}-{self.other:04d}:{self.value}"
        return f"{self.kind}:{self.atom:04d}"


def _element_classes(tables) -> dict:
    out: dict[str, set] = {}
    for t in tables.values():
        for name, e in t.entries.items():
            if e.element:
                out.setdefault(e.element, set()).add(name)
    return {k: sorted(v) for k, v in out.items()}


def enumerate_edits(graph: MoleculeGraph, tables) -> list[Edit]:
    """All single edits of the repair grammar, in descriptor order."""
    classes = _element_classes(tables)
    adj = graph.adjacency()
    edits = []
    for i, a in enumerate(graph.atoms):
        for c in classes.get(a.element, ()):
            if c != a.environment_class:
                edits.append(Edit("class", i, value=c))
    for bd in graph.bonds:
        if bd.order == 1:
            if all(graph.used_valence(x) + 1 <= VALENCE.get(graph.atoms[x].element, 4) for x in (bd.a, bd.b)):
                edits.append(Edit("bond", min(bd.a, bd.b), max(bd.a, bd.b), 2))
        elif bd.order == 2:
            edits.append(Edit("bond", min(bd.a, bd.b), max(bd.a, bd.b), 1))
    for i, a in enumerate(graph.atoms):
        open_valence = graph.used_valence(i) < VALENCE.get(a.element, 4)
        if a.element == "C" and (a.attached_hydrogens > 0 or open_valence):
            edits.append(Edit("methyl+", i))
        if (a.element == "C" and a.attached_hydrogens == 3 and len(adj[i]) == 1
                and len(graph.atoms) > 1):
            edits.append(Edit("methyl-", i))
    edits.sort(key=Edit.descriptor)
    return edits


def _methyl_class(parent: Atom) -> str:
    if parent.element == "O":
        return "CH3_OMe"
    if parent.environment_class.startswith(("ArC", "Pyr")):
        return "CH3_aryl"
    return "CH3_alkyl"


def apply_edit(graph: MoleculeGraph, edit: Edit) -> MoleculeGraph:
    atoms = list(graph.atoms)
    if edit.kind == "class":
        atoms[edit.atom] = replace(atoms[edit.atom], environment_class=edit.value)
        return MoleculeGraph(atoms, graph.bonds, graph.dihedrals)
    if edit.kind == "bond":
        bonds = [Bond(b.a, b.b, edit.value) if {b.a, b.b} == {edit.atom, edit.other} else b for b in graph.bonds]
        return MoleculeGraph(atoms, bonds, graph.dihedrals)
    if edit.kind == "methyl+":
        parent = atoms[edit.atom]
        # substitution replaces a hydrogen when there is one, else fills an open valence
        if parent.attached_hydrogens > 0:
            atoms[edit.atom] = replace(parent, attached_hydrogens=parent.attached_hydrogens - 1)
        atoms.append(Atom("C", 3, _methyl_class(parent)))
        return MoleculeGraph(atoms, graph.bonds + (Bond(edit.atom, len(atoms) - 1, 1),), graph.dihedrals)
    if edit.kind == "methyl-":
        i = edit.atom
        parent = next(u for u, _ in graph.adjacency()[i])
        atoms[parent] = replace(atoms[parent], attached_hydrogens=atoms[parent].attached_hydrogens + 1)
        remap = {old: new for new, old in enumerate(x for x in range(len(atoms)) if x != i)}
        bonds = [Bond(remap[b.a], remap[b.b], b.order) for b in graph.bonds if i not in (b.a, b.b)]
        dih = [Dihedral(tuple(remap[x] for x in d.path), d.theta_deg) for d in graph.dihedrals if i not in d.path]
        return MoleculeGraph([a for x, a in enumerate(atoms) if x != i], bonds, dih)
    raise InvariantViolation(f"unknown edit kind {edit.kind!r}")


def repair_reward(candidate: CandidateStructure, target, tol: dict | None = None) -> float:
    """R_repair = Sim(simulated, target), averaged over the target's nuclei."""
    q = _as_query(target)
    tol = tol or {}
    return float(np.mean([peak_set_similarity(simulate_spectrum(candidate, n), s, tol.get(n))
                          for n, s in sorted(q.items())]))


def repair_local_search(candidate: CandidateStructure, target, tables, max_iters: int = 10,
                        tol: dict | None = None) -> tuple[CandidateStructure, list[float]]:
    """Best-improvement hill climbing over single edits.

    Every iteration scores all legal edits and applies the one with the
    highest reward if it strictly improves; equal rewards resolve to the
    smallest edit descriptor.  Edits whose result cannot be simulated (for
    example a class the shift table lacks for one nucleus) are skipped.
    Returns the final candidate (provenance ``repaired``) and the reward
    trace, which starts with the input's reward and increases strictly.

    Raises
    ------
    NoLegalEdits
        The edit grammar yields nothing for the input graph.
    """
    if not enumerate_edits(candidate.graph, tables):
        raise NoLegalEdits(f"no legal edits for candidate {candidate.id!r}")
    current = candidate
    trace = [repair_reward(current, target, tol)]
    for _ in range(max_iters):
        best = None
        for edit in enumerate_edits(current.graph, tables):
            try:
                g = apply_edit(current.graph, edit)
                cand = build_candidate(current.id, g, tables, "repaired")
                r = repair_reward(cand, target, tol)
            except NmrxError:
                continue
            if r > trace[-1] and (best is None or r > best[0]):
                best = (r, cand)
        if best is None:
            break
        trace.append(best[0])
        current = best[1]
    return replace(current, provenance="repaired"), trace
