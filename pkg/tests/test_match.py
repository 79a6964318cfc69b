from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmrx.errors import (EmptyDatabase, InvariantViolation, MalformedDocument, NoLegalEdits, NucleusMismatch,
                         SchemaVersionError)
from nmrx.match import (DB_VERSION, CandidateDatabase, apply_edit, cosine, enumerate_edits, peak_set_similarity,
                        repair_local_search, repair_reward, search_two_stage, spectrum_vector)
from nmrx.molecule import VALENCE, Atom, MoleculeGraph, ShiftTable, Signal, SignalSet, build_candidate, simulate_spectrum

from helpers import sample_db
from oracles import exhaustive_search as exhaustive


def sset(*sigs, nucleus="H1"):
    return SignalSet(tuple(Signal(s, m, (), w) for s, w, m in sigs), nucleus)


def greedy_sim(a, b, tol):
    """Independent restatement: sort all in-tolerance pairs by distance, take greedily."""
    cand = sorted(((abs(x.shift_ppm - y.shift_ppm), i, j) for i, x in enumerate(a.signals)
                   for j, y in enumerate(b.signals) if abs(x.shift_ppm - y.shift_ppm) <= tol))
    ua, ub, w = set(), set(), 0.0
    for _, i, j in cand:
        if i in ua or j in ub:
            continue
        ua.add(i)
        ub.add(j)
        x, y = a.signals[i], b.signals[j]
        same = x.multiplicity == y.multiplicity or "m" in (x.multiplicity, y.multiplicity)
        w += min(x.weight, y.weight) * (1 if same else 0.5)
    tot = a.total_weight + b.total_weight
    return 2 * w / tot if tot else 0.0


# --- similarity -------------------------------------------------------------------

def test_sim_examples():
    a = sset((7.26, 2, "d"), (3.78, 3, "s"))
    assert peak_set_similarity(a, a) == 1.0
    assert peak_set_similarity(a, sset((1.0, 2, "d"), (2.0, 3, "s"))) == 0.0
    b = sset((7.25, 2, "d"), (1.20, 3, "s"))
    assert peak_set_similarity(a, b, 0.05) == pytest.approx(0.4, abs=1e-15)


def test_sim_multiplicity_mismatch_halves():
    a, b = sset((7.26, 2, "d")), sset((7.26, 2, "t"))
    assert peak_set_similarity(a, b) == pytest.approx(0.5)
    assert peak_set_similarity(a, sset((7.26, 2, "m"))) == 1.0


def test_sim_errors():
    with pytest.raises(NucleusMismatch):
        peak_set_similarity(sset((1, 1, "s")), sset((1, 1, "s"), nucleus="C13"))
    with pytest.raises(InvariantViolation):
        peak_set_similarity(sset((1, 1, "s")), sset((1, 1, "s")), 0.0)


_sig = st.tuples(st.floats(0, 10).map(lambda x: round(x, 2)), st.integers(1, 6), st.sampled_from("sdtqm"))


@settings(max_examples=200)
@given(st.lists(_sig, max_size=8), st.lists(_sig, max_size=8), st.floats(0.01, 0.5))
def test_sim_properties(a, b, tol):
    a, b = sset(*a), sset(*b)
    s = peak_set_similarity(a, b, tol)
    assert 0.0 <= s <= 1.0
    assert s == peak_set_similarity(b, a, tol)
    if len(a):
        assert peak_set_similarity(a, a, tol) == 1.0


@settings(max_examples=200)
@given(st.lists(_sig, max_size=8, unique_by=lambda t: t[0]), st.lists(_sig, max_size=8, unique_by=lambda t: t[0]))
def test_sim_matches_restatement(a, b):
    # distinct shifts per side keep distance ties rare; where they exist the canonical order may differ
    a, b = sset(*a), sset(*b)
    dists = [abs(x.shift_ppm - y.shift_ppm) for x in a.signals for y in b.signals]
    if len(set(dists)) == len(dists):
        assert peak_set_similarity(a, b, 0.1) == pytest.approx(greedy_sim(a, b, 0.1), abs=1e-12)


# --- vectors ----------------------------------------------------------------------

def test_vector_examples():
    assert not spectrum_vector(SignalSet((), "H1")).bins.any()
    v = spectrum_vector(sset((7.26, 1, "s")))
    assert int(np.argmax(v.bins)) == int((7.26 + 1) / 14 * 256)
    w = spectrum_vector(sset((3.0, 2, "s"), (8.0, 2, "s"))).bins
    i, j = int((3.0 + 1) / 14 * 256), int((8.0 + 1) / 14 * 256)
    assert w[i] == w[j] and w[i] == w.max()
    assert w[i] > w[i - 1] and w[i] > w[i + 1] and w[j] > w[j - 1] and w[j] > w[j + 1]


@given(st.lists(_sig, max_size=10), st.sampled_from(["H1", "C13"]))
def test_vector_norm(sigs, nuc):
    v = spectrum_vector(SignalSet(tuple(Signal(s * (20 if nuc == "C13" else 1), m, (), w) for s, w, m in sigs), nuc))
    n = float(np.linalg.norm(v.bins))
    assert n == 0 or abs(n - 1) <= 1e-9
    assert np.all(v.bins >= 0)


@given(st.lists(_sig, min_size=1, max_size=10), st.floats(0.01, 100))
def test_cosine_scale_invariant(sigs, a):
    s1 = sset(*sigs)
    s2 = SignalSet(tuple(replace(x, weight=x.weight * a) for x in s1.signals), "H1")
    assert cosine(spectrum_vector(s1), spectrum_vector(s2)) == pytest.approx(1.0, abs=1e-9)


# --- database and search ------------------------------------------------------------

def test_self_retrieval(lib):
    db = sample_db(lib)
    for e in db.entries[::17]:
        hits = search_two_stage([e.h_signals, e.c_signals], db, coarse_k=10, k=3)
        assert hits[0].candidate.id == e.candidate.id and hits[0].sim == 1.0


def test_full_coarse_equals_exhaustive(lib):
    db = sample_db(lib)
    rng = np.random.default_rng(3)
    for e in db.entries[::9]:
        q = [SignalSet(tuple(replace(s, shift_ppm=s.shift_ppm + rng.normal(0, 0.03)) for s in e.h_signals.signals),
                       "H1")]
        hits = search_two_stage(q, db, coarse_k=len(db), k=10)
        assert [(h.candidate.id, h.sim) for h in hits] == exhaustive(q, db, 10)


def test_planted_near_duplicate(lib, tables):
    db = sample_db(lib)
    target = db.entries[42]
    q = SignalSet(tuple(replace(s, shift_ppm=s.shift_ppm + 0.01) for s in target.h_signals.signals), "H1")
    hits = search_two_stage(q, db, coarse_k=20, k=3)
    assert hits[0].candidate.id == target.candidate.id


def test_db_order_irrelevant(lib):
    db = sample_db(lib, 60)
    rev = CandidateDatabase(db.entries[::-1])
    q = db.entries[5].h_signals
    a = [(h.candidate.id, h.sim) for h in search_two_stage(q, db, 15, 8)]
    assert a == [(h.candidate.id, h.sim) for h in search_two_stage(q, rev, 15, 8)]


def test_search_errors(lib):
    with pytest.raises(EmptyDatabase):
        search_two_stage(sset((1, 1, "s")), CandidateDatabase([]))
    db = sample_db(lib, 5)
    with pytest.raises(InvariantViolation):
        search_two_stage(sset((1, 1, "s")), db, coarse_k=2, k=3)


def test_db_binary_roundtrip(lib, tmp_path):
    db = sample_db(lib, 20)
    blob = db.to_bytes()
    back = CandidateDatabase.from_bytes(blob)
    assert back.to_bytes() == blob
    for a, b in zip(db.entries, back.entries):
        assert a.candidate == b.candidate and a.vector_h == b.vector_h and a.vector_c == b.vector_c
    db.save(tmp_path / "db.bin")
    assert CandidateDatabase.load(tmp_path / "db.bin").to_bytes() == blob


def test_db_binary_rejects(lib):
    blob = bytearray(sample_db(lib, 3).to_bytes())
    with pytest.raises(MalformedDocument):
        CandidateDatabase.from_bytes(b"XXXXXXXX" + bytes(blob[8:]))
    bad = bytearray(blob)
    bad[8:12] = (DB_VERSION + 1).to_bytes(4, "little")
    with pytest.raises(SchemaVersionError):
        CandidateDatabase.from_bytes(bytes(bad))
    with pytest.raises(MalformedDocument):
        CandidateDatabase.from_bytes(bytes(blob[:-8]))
    tampered = bytearray(blob)
    tampered[-8:] = np.float64(0.123).tobytes()
    with pytest.raises(MalformedDocument):
        CandidateDatabase.from_bytes(bytes(tampered))


def test_build_from_dir(lib, tables, tmp_path):
    import json
    for c in lib[:4]:
        (tmp_path / f"{c.id}.json").write_text(json.dumps(c.to_dict()))
    db = CandidateDatabase.build_from_dir(tmp_path, tables)
    assert [e.candidate.id for e in db.entries] == sorted(c.id for c in lib[:4])
    with pytest.raises(EmptyDatabase):
        CandidateDatabase.build_from_dir(tmp_path / "nothing", tables)


# --- repair -----------------------------------------------------------------------

def test_repair_already_optimal(lib, tables):
    c = lib[10]
    target = [simulate_spectrum(c, "H1"), simulate_spectrum(c, "C13")]
    out, trace = repair_local_search(c, target, tables)
    assert trace == [1.0]
    assert out.graph == c.graph and out.provenance == "repaired"


def test_repair_single_swap(lib, tables):
    c = next(x for x in lib if x.id == "bz-OMe-Cl")
    k = next(i for i, a in enumerate(c.graph.atoms) if a.environment_class == "ArC_Cl")
    atoms = list(c.graph.atoms)
    atoms[k] = replace(atoms[k], environment_class="ArC_Br")
    broken = build_candidate("broken", MoleculeGraph(atoms, c.graph.bonds), tables)
    target = [simulate_spectrum(c, "H1"), simulate_spectrum(c, "C13")]
    out, trace = repair_local_search(broken, target, tables, max_iters=1)
    assert len(trace) == 2 and trace[1] > trace[0]
    assert trace[1] == 1.0
    assert out.graph == c.graph


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_repair_monotone(lib, tables, seed):
    rng = np.random.default_rng(seed)
    start, goal = (lib[int(i)] for i in rng.choice(len(lib), 2, replace=False))
    target = [simulate_spectrum(goal, "H1")]
    out, trace = repair_local_search(start, target, tables, max_iters=3)
    assert all(b > a for a, b in zip(trace, trace[1:]))
    assert trace[-1] == repair_reward(out, target) >= repair_reward(start, target)


def test_no_legal_edits():
    tables = {"H1": ShiftTable.from_dict({"Cl": {"base_ppm": 0.0, "element": "Cl"}})}
    g = MoleculeGraph([Atom("Cl", 0, "Cl")])
    assert enumerate_edits(g, tables) == []
    from nmrx.molecule import CandidateStructure
    with pytest.raises(NoLegalEdits):
        repair_local_search(CandidateStructure("cl", g), [sset((1, 1, "s"))], tables)


def test_edits_sorted_and_legal(lib, tables):
    for c in lib[::25]:
        edits = enumerate_edits(c.graph, tables)
        assert [e.descriptor() for e in edits] == sorted(e.descriptor() for e in edits)
        # aromatic bonds count 1.5, so a pyrrole NH already sits above 3; edits must not add to that
        cap = [max(VALENCE.get(a.element, 4), c.graph.used_valence(i)) for i, a in enumerate(c.graph.atoms)]
        for e in edits:
            g = apply_edit(c.graph, e)
            caps = [x for k, x in enumerate(cap) if k != e.atom] if e.kind == "methyl-" else cap
            for i, a in enumerate(g.atoms):
                assert g.used_valence(i) <= (caps[i] if i < len(caps) else VALENCE[a.element])
