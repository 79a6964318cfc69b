import json

import pytest

from nmrx.agent import Trajectory
from nmrx.assign import rerank
from nmrx.cli import main
from nmrx.errors import SchemaVersionError
from nmrx.fid import dump_fid_json
from nmrx.match import CandidateDatabase
from nmrx.peaks import AnnotatedSpectrum
from nmrx.synth import planted_fids

from helpers import sample_db

TRUTH = "bz-Br-Et"


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, lib):
    d = tmp_path_factory.mktemp("cli")
    db = sample_db(lib, n=40, seed=3)
    by_id = {c.id: c for c in lib}
    if TRUTH not in {e.candidate.id for e in db.entries}:
        db = CandidateDatabase.build([e.candidate for e in db.entries] + [by_id[TRUTH]])
    db.save(d / "db.bin")
    fids = planted_fids(by_id[TRUTH], seed=5)
    for nuc, fid in fids.items():
        (d / f"{nuc}.json").write_bytes(dump_fid_json(fid))
    (d / "truth.json").write_text(json.dumps(by_id[TRUTH].to_dict()))
    return d


def run(*argv):
    return main([str(a) for a in argv])


def test_report_ranks_planted_first(workspace):
    w = workspace
    assert run("report", w / "H1.json", w / "C13.json", "--db", w / "db.bin", "-o", w / "r1.json",
               "--text", w / "r1.txt", "--trajectory", w / "t1.json") == 0
    report = json.loads((w / "r1.json").read_text())
    assert report["ranking"][0]["id"] == TRUTH
    assert report["schema"] == "nmrx.report/1"
    assert "Ranked candidates" in (w / "r1.txt").read_text()
    assert run("report", w / "H1.json", w / "C13.json", "--db", w / "db.bin", "-o", w / "r2.json") == 0
    assert (w / "r1.json").read_bytes() == (w / "r2.json").read_bytes()
    assert run("agent-run", "--db", w / "db.bin", "--replay", w / "t1.json") == 0


def test_missing_db_fails_fast(workspace, capsys):
    w = workspace
    assert run("report", w / "H1.json", "--db", w / "nope.bin", "-o", w / "x.json") == 2
    assert "database not found" in capsys.readouterr().err
    assert not (w / "x.json").exists()


def test_stage_error_names_stage_and_path(workspace, capsys):
    bad = workspace / "bad.json"
    bad.write_text("{not json")
    assert run("report", bad, "--db", workspace / "db.bin") == 2
    err = capsys.readouterr().err
    assert "stage ingest" in err and str(bad) in err


@pytest.fixture(scope="module")
def annotated(workspace):
    """Run the step-by-step subcommands on the H1 FID; returns the annotated JSON path."""
    w = workspace
    assert run("ingest", w / "H1.json", "-o", w / "fid.json") == 0
    assert run("transform", w / "fid.json", "-o", w / "spec.json") == 0
    assert run("correct", w / "spec.json", "-o", w / "corr.json") == 0
    assert run("annotate", w / "corr.json", "-o", w / "ann.json", "--text", w / "ann.txt") == 0
    return w / "ann.json"


def test_stepwise_chain_matches_library(workspace, annotated):
    w = workspace
    assert (w / "ann.txt").read_text().startswith("1H NMR (400 MHz, DMSO-d6): 7.42 (d, J = 8.4 Hz, ")
    # the smallest multiplet is the 1H unit unless the proton total is given
    assert run("annotate", w / "corr.json", "--total-protons", 9, "-o", w / "ann9.json") == 0
    counts = [m["integral_protons"] for m in json.loads((w / "ann9.json").read_text())["multiplets"]]
    assert counts == [2, 2, 2, 3]
    assert run("search", annotated, "--db", w / "db.bin", "-k", "5", "-o", w / "hits.json") == 0
    hits = json.loads((w / "hits.json").read_text())["hits"]
    assert hits[0]["id"] == TRUTH and len(hits) == 5
    assert run("rerank", annotated, "--db", w / "db.bin", "-o", w / "rank.json") == 0
    ranking = json.loads((w / "rank.json").read_text())["ranking"]
    # thin wrapper: same ordering and scores as the library call
    ann = AnnotatedSpectrum.from_dict(json.loads(annotated.read_text()))
    direct = rerank([e.candidate for e in CandidateDatabase.load(w / "db.bin").entries], [ann])
    assert [(r["id"], r["S"]) for r in ranking] == [(r.candidate.id, r.score) for r in direct]


def test_agent_run_and_eval(workspace, annotated, capsys):
    w = workspace
    trajs = w / "trajs"
    trajs.mkdir()
    for policy in ("workflow", "greedy-budget"):
        assert run("agent-run", annotated, "--policy", policy, "--db", w / "db.bin", "--budget", 8,
                   "--truth", w / "truth.json", "-o", trajs / f"{policy}.json") == 0
    capsys.readouterr()
    assert run("eval", "--trajectories", trajs, "--k", "1,3,5") == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0] == "| Policy | N | hit@1 | hit@3 | hit@5 |"
    assert "| workflow | 1 | 1.000 | 1.000 | 1.000 |" in table
    assert run("eval", "--trajectories", trajs, "--k", "0") == 2


def test_schema_version_rejected(workspace, capsys):
    w = workspace
    run("report", w / "H1.json", w / "C13.json", "--db", w / "db.bin", "-o", w / "r.json", "--trajectory", w / "t.json")
    doc = json.loads((w / "t.json").read_text())
    doc["schema"] = "nmrx.trajectory/2"
    (w / "t2.json").write_text(json.dumps(doc))
    assert run("agent-run", "--db", w / "db.bin", "--replay", w / "t2.json") == 2
    assert "expects nmrx.trajectory/1" in capsys.readouterr().err
    with pytest.raises(SchemaVersionError):
        Trajectory.from_dict(doc)


def test_db_build_and_usage_errors(workspace, tmp_path, capsys):
    assert run("db", "build", "--library", "-o", tmp_path / "lib.bin") == 0
    assert len(CandidateDatabase.load(tmp_path / "lib.bin")) > 100
    assert run("db", "build") == 2
    with pytest.raises(SystemExit) as e:
        run("bogus")
    assert e.value.code == 2
