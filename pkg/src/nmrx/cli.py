"""Command-line interface.  Exit codes: 0 success, 2 validation error, 3 processing error."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import schema
from .agent import Trajectory, hit_at_k, rank_of, replay, run_scripted_policy, same_rewards, structure_key
from .assign import rerank
from .correct import BaselineConfig, PhaseParams
from .errors import MalformedDocument, NmrxError, ProcessingError, ValidationError
from .fid import dump_fid_json
from .match import CandidateDatabase, load_candidate, search_two_stage
from .molecule import load_shift_tables, signals_from_annotated
from .peaks import AnnotatedSpectrum, render_nmr_text
from .pipeline import (PipelineConfig, StageError, annotate_spectrum, correct_spectrum, dumps, make_tools,
                       read_fid, render_report_text, run_pipeline, transform_fid)
from .synth import library
from .transform import Spectrum


def _read_json(path, kind=None):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise MalformedDocument(f"cannot read {path}: {exc}") from None
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedDocument(f"{path} is not valid JSON: {exc}") from None
    if kind is not None:
        if not isinstance(doc, dict):
            raise MalformedDocument(f"{path}: expected a JSON object")
        schema.check(doc, kind)
    return doc


def _emit(text: str, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    over = {}
    for name in ("window", "threshold_sigma", "budget", "seed", "total_protons"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    if getattr(args, "db", None):
        over["database"] = args.db
    if getattr(args, "policy", None):
        over["policy"] = replace(cfg.policy, name=args.policy)
    return replace(cfg, **over) if over else cfg


def _annotated(paths):
    return [AnnotatedSpectrum.from_dict(_read_json(p, "annotated")) for p in paths]


# --- subcommands --------------------------------------------------------------

def cmd_ingest(args):
    fid = read_fid(args.input, args.format)
    _emit(dump_fid_json(fid).decode("utf-8"), args.output)


def cmd_transform(args):
    from .fid import parse_fid_json
    fid = parse_fid_json(Path(args.input).read_bytes())
    cfg = _config(args)
    if args.zerofill is not None:
        cfg = replace(cfg, zero_fill=args.zerofill)
    _emit(dumps(transform_fid(fid, cfg).to_dict()), args.output)


def cmd_correct(args):
    spec = Spectrum.from_dict(_read_json(args.input, "spectrum"))
    cfg = _config(args)
    if args.baseline:
        cfg = replace(cfg, baseline=BaselineConfig(method=args.baseline, degree=args.degree))
    phase, corrected, noise = correct_spectrum(spec, cfg, args.phase == "auto")
    _emit(dumps({"schema": schema.tag("corrected"), "spectrum": corrected.to_dict(),
                 "phase": phase.phase.to_dict(), "objective_before": phase.objective_before,
                 "objective_after": phase.objective_after, "low_confidence": phase.low_confidence,
                 "noise_sigma": noise}), args.output)


def cmd_annotate(args):
    doc = _read_json(args.input, "corrected")
    try:
        spec = Spectrum.from_dict(doc["spectrum"])
        noise = float(doc["noise_sigma"])
        PhaseParams(**doc["phase"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedDocument(f"bad corrected document: {exc}") from None
    _, ann = annotate_spectrum(spec, noise, _config(args), args.total_protons)
    _emit(dumps(ann.to_dict()), args.output)
    if args.text:
        _emit(render_nmr_text(ann) + "\n", None if args.text == "-" else args.text)


def cmd_db_build(args):
    tables = load_shift_tables(args.shift_tables)
    if args.library:
        db = CandidateDatabase.build(library(tables))
    elif args.directory:
        db = CandidateDatabase.build_from_dir(args.directory, tables)
    else:
        raise ValidationError("give a molecule directory or --library")
    if not args.output:
        raise ValidationError("db build needs -o/--output")
    db.save(args.output)
    print(f"wrote {len(db)} entries to {args.output}")


def cmd_search(args):
    db = CandidateDatabase.load(args.db)
    query = [signals_from_annotated(a) for a in _annotated(args.inputs)]
    hits = search_two_stage(query, db, args.coarse_k, args.k)
    _emit(dumps({"schema": schema.tag("search"), "hits": [h.to_dict() for h in hits]}), args.output)


def cmd_rerank(args):
    obs = _annotated(args.inputs)
    cfg = _config(args)
    tables = load_shift_tables(cfg.shift_tables)
    files = []
    for p in args.candidates or []:
        files += sorted(Path(p).glob("*.json")) if Path(p).is_dir() else [Path(p)]
    cands = [load_candidate(p, tables) for p in files]
    if args.db:
        db = CandidateDatabase.load(args.db)
        if args.top:
            hits = search_two_stage([signals_from_annotated(a) for a in obs], db, max(50, args.top), args.top)
            cands += [h.candidate for h in hits]
        else:
            cands += [e.candidate for e in db.entries]
    ranked = rerank(cands, obs, cfg.assign, use_hard_case=args.hard_case)
    _emit(dumps({"schema": schema.tag("ranking"), "ranking": [r.to_dict() for r in ranked]}), args.output)


def cmd_agent_run(args):
    cfg = _config(args)
    cfg.validate(need_db=True)
    tools = make_tools(cfg)
    if args.replay:
        old = Trajectory.from_dict(_read_json(args.replay, "trajectory"))
        new = replay(old, replace(tools, seed=old.seed), cfg.reward)
        if not same_rewards(old, new):
            raise ProcessingError("replay diverged from the recorded trajectory")
        print(f"replay identical: {len(new.steps)} steps, return {new.stored_return!r}")
        return
    if not args.inputs:
        raise ValidationError("agent-run needs annotated inputs (or --replay)")
    traj = run_scripted_policy(_annotated(args.inputs), cfg.policy, tools, cfg.reward, cfg.budget)
    if args.truth:
        traj = replace(traj, ground_truth=structure_key(load_candidate(args.truth, tools.tables).graph))
    _emit(dumps(traj.to_dict()), args.output)


def evaluate_trajectories(paths, ks) -> dict:
    """hit@k per policy over trajectories that record a ground truth."""
    by_policy: dict[str, list] = {}
    for p in paths:
        t = Trajectory.from_dict(_read_json(p, "trajectory"))
        if t.ground_truth is None:
            continue
        by_policy.setdefault(t.policy, []).append(rank_of(t, t.ground_truth))
    if not by_policy:
        raise ValidationError("no trajectories with a ground truth")
    return {pol: {"n": len(r), **{f"hit@{k}": hit_at_k(r, k) for k in ks}} for pol, r in sorted(by_policy.items())}


def cmd_eval(args):
    d = Path(args.trajectories)
    paths = sorted(d.glob("*.json")) if d.is_dir() else [d]
    try:
        ks = [int(k) for k in args.k.split(",")]
    except ValueError:
        raise ValidationError(f"bad k list {args.k!r}") from None
    if any(k < 1 for k in ks):
        raise ValidationError("k values must be >= 1")
    table = evaluate_trajectories(paths, ks)
    if args.json:
        _emit(dumps(table), args.output)
        return
    head = "| Policy | N | " + " | ".join(f"hit@{k}" for k in ks) + " |"
    rows = [head, "|" + "---|" * (len(ks) + 2)]
    for pol, row in table.items():
        rows.append(f"| {pol} | {row['n']} | " + " | ".join(f"{row[f'hit@{k}']:.3f}" for k in ks) + " |")
    _emit("\n".join(rows) + "\n", args.output)


def cmd_report(args):
    cfg = _config(args)
    report, traj = run_pipeline(args.fids, cfg, args.total_protons)
    _emit(dumps(report), args.output)
    if args.text:
        _emit(render_report_text(report), None if args.text == "-" else args.text)
    if args.trajectory:
        Path(args.trajectory).write_text(dumps(traj.to_dict()), encoding="utf-8")


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nmrx", description="NMR processing and structure elucidation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="TOML pipeline config")
        if out:
            p.add_argument("-o", "--output", help="output file (default: stdout)")

    p = sub.add_parser("ingest", help="parse a JSON or JCAMP-DX FID into the canonical JSON container")
    p.add_argument("input")
    p.add_argument("--format", choices=["auto", "json", "jcamp"], default="auto")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("transform", help="apodize, zero-fill and Fourier transform a FID")
    p.add_argument("input")
    common(p)
    p.add_argument("--window", help="none | exp:LB | gauss:GB | sine:OFFSET")
    p.add_argument("--zerofill", dest="zerofill", action="store_true", default=None,
                   help="zero-fill to a power of two >= 2N (the default)")
    p.add_argument("--no-zerofill", dest="zerofill", action="store_false")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("correct", help="automatic phase and baseline correction")
    p.add_argument("input")
    common(p)
    p.add_argument("--phase", choices=["auto", "none"], default="auto")
    p.add_argument("--baseline", choices=["polynomial", "iasls"])
    p.add_argument("--degree", type=int, default=2)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("annotate", help="pick peaks, classify multiplets and integrate")
    p.add_argument("input")
    common(p)
    p.add_argument("--threshold-sigma", type=float)
    p.add_argument("--total-protons", type=int)
    p.add_argument("--text", metavar="PATH", help="also write the NMR text line here ('-' for stdout)")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("db", help="candidate database tools")
    dsub = p.add_subparsers(dest="db_command", required=True)
    b = dsub.add_parser("build", help="build a database from molecule JSON files")
    b.add_argument("directory", nargs="?")
    b.add_argument("--library", action="store_true", help="use the built-in substituted-ring library")
    b.add_argument("--shift-tables")
    b.add_argument("-o", "--output")
    b.set_defaults(func=cmd_db_build)

    p = sub.add_parser("search", help="two-stage spectral search")
    p.add_argument("inputs", nargs="+", help="annotated spectra (one per nucleus)")
    p.add_argument("--db", required=True)
    p.add_argument("-k", "--k", type=int, default=10)
    p.add_argument("--coarse-k", type=int, default=50)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("rerank", help="score and rank candidates by optimal assignment cost")
    p.add_argument("inputs", nargs="+")
    common(p)
    p.add_argument("--candidates", nargs="*", help="molecule JSON files or directories of them")
    p.add_argument("--db")
    p.add_argument("--top", type=int, help="rank only the top search hits from --db")
    p.add_argument("--hard-case", action="store_true")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("agent-run", help="run a scripted policy in the decision environment")
    p.add_argument("inputs", nargs="*")
    common(p)
    p.add_argument("--policy", choices=["workflow", "greedy-budget"])
    p.add_argument("--db")
    p.add_argument("--budget", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--truth", help="molecule JSON of the known answer, recorded for eval")
    p.add_argument("--replay", help="re-execute a recorded trajectory and check its rewards")
    p.set_defaults(func=cmd_agent_run)

    p = sub.add_parser("eval", help="hit@k table over trajectories")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--k", default="1,3,5")
    p.add_argument("--json", action="store_true")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="full pipeline: FIDs to a ranked elucidation report")
    p.add_argument("fids", nargs="+")
    common(p)
    p.add_argument("--db")
    p.add_argument("--policy", choices=["workflow", "greedy-budget"])
    p.add_argument("--budget", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--total-protons", type=int)
    p.add_argument("--text", help="also write the human-readable report here")
    p.add_argument("--trajectory", help="also write the agent trajectory here")
    p.set_defaults(func=cmd_report)
    return ap


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, ValidationError):
        return 2
    if isinstance(exc, ProcessingError):
        return 3
    return 3


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except NmrxError as exc:
        print(f"nmrx: error: {exc}", file=sys.stderr)
        return exit_code(exc)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
