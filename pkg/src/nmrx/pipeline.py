"""End-to-end driver: FID files to an elucidation report."""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path


from . import schema
from .agent import PolicySpec, RewardWeights, ToolBundle, run_scripted_policy
from .assign import AssignConfig
from .correct import (BaselineConfig, PhaseParams, PhaseResult, acme_objective, apply_phase, baseline_correct,
                      estimate_noise, phase_correct_acme)
from .errors import ConfigError, MalformedDocument, NmrxError
from .fid import Fid, parse_fid_json, parse_jcamp_subset
from .match import CandidateDatabase
from .molecule import load_shift_tables
from .peaks import AnnotatedSpectrum, ClassifierConfig, RuleClassifier, annotate, detect_peaks, render_nmr_text
from .synth import RandomGenerator
from .transform import Spectrum, WindowFunction, apodize, fourier_transform, zero_fill

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


@dataclass(frozen=True)
class PipelineConfig:
    window: str = "none"
    zero_fill: bool = True
    threshold_sigma: float = 5.0
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    gap_hz: float = 18.0
    assign: AssignConfig = field(default_factory=AssignConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    policy: PolicySpec = field(default_factory=PolicySpec)
    budget: int = 8
    database: str | None = None
    shift_tables: str | None = None
    seed: int = 0
    total_protons: int | None = None

    def validate(self, need_db: bool = True) -> None:
        """Fail fast on anything that would only break later."""
        WindowFunction.parse(self.window)
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if not self.threshold_sigma > 0:
            raise ConfigError("threshold_sigma must be positive")
        if need_db:
            if not self.database:
                raise ConfigError("no database path configured")
            if not os.path.isfile(self.database):
                raise ConfigError(f"database not found: {self.database}")
        if self.shift_tables and not os.path.isfile(self.shift_tables):
            raise ConfigError(f"shift table file not found: {self.shift_tables}")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | os.PathLike | None = None) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a table")
        d = dict(d)
        sub = {"baseline": BaselineConfig, "classifier": ClassifierConfig, "reward": RewardWeights,
               "policy": PolicySpec}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kw = {}
            for k, v in d.items():
                if k == "assign":
                    kw[k] = AssignConfig.from_dict(v)
                elif k in sub:
                    kw[k] = _sub(sub[k], v)
                else:
                    kw[k] = v
            for k in ("database", "shift_tables"):
                if kw.get(k) and base_dir is not None and not os.path.isabs(kw[k]):
                    kw[k] = str(Path(base_dir) / kw[k])
            return cls(**kw)
        except (TypeError, ValueError, NmrxError) as exc:
            raise ConfigError(f"bad config: {exc}") from None

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            with open(path, "rb") as fh:
                d = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from None
        return cls.from_dict(d, Path(path).parent)


def _sub(klass, v):
    if not isinstance(v, dict):
        raise ConfigError(f"{klass.__name__} settings must be a table")
    extra = set(v) - {f.name for f in fields(klass)}
    if extra:
        raise ConfigError(f"unknown {klass.__name__} keys: {sorted(extra)}")
    return klass(**v)


class StageError(NmrxError):
    """Wraps a stage failure; ``cause`` keeps the original typed error for exit-code mapping."""

    def __init__(self, stage: str, path, cause: NmrxError):
        self.stage, self.path, self.cause = stage, str(path), cause
        super().__init__(f"stage {stage} failed for {path}: {type(cause).__name__}: {cause}")


class _stage:
    def __init__(self, name, path):
        self.name, self.path = name, path

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        if ev is not None and isinstance(ev, NmrxError) and not isinstance(ev, StageError):
            raise StageError(self.name, self.path, ev) from ev
        return False


# --- processing ---------------------------------------------------------------

def read_fid(path, fmt: str = "auto") -> Fid:
    """Load a FID from the JSON container or a JCAMP-DX file (``auto`` sniffs the first byte)."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise MalformedDocument(f"cannot read {path}: {exc}") from None
    if fmt == "auto":
        fmt = "json" if blob.lstrip()[:1] == b"{" else "jcamp"
    if fmt == "json":
        return parse_fid_json(blob)
    return parse_jcamp_subset(blob)


@dataclass(frozen=True)
class Processed:
    spectrum: Spectrum
    phase: PhaseResult
    noise_sigma: float
    peaks: tuple
    annotated: AnnotatedSpectrum


def transform_fid(fid: Fid, config: PipelineConfig) -> Spectrum:
    fid = apodize(fid, WindowFunction.parse(config.window))
    if config.zero_fill:
        fid = zero_fill(fid)
    return fourier_transform(fid)


def correct_spectrum(spectrum: Spectrum, config: PipelineConfig, auto_phase: bool = True):
    if auto_phase:
        phase = phase_correct_acme(spectrum)
    else:
        obj = float(acme_objective(spectrum.real))
        phase = PhaseResult(PhaseParams(), apply_phase(spectrum, PhaseParams()), obj, obj, False)
    noise0 = estimate_noise(phase.spectrum)
    corrected, _ = baseline_correct(phase.spectrum, config.baseline, noise0)
    return phase, corrected, estimate_noise(corrected)


def annotate_spectrum(spectrum: Spectrum, noise: float, config: PipelineConfig, total_protons=None):
    peaks = detect_peaks(spectrum, noise, config.threshold_sigma)
    tp = total_protons if total_protons is not None else config.total_protons
    ann = annotate(peaks, spectrum.params, noise, RuleClassifier(config.classifier), config.gap_hz,
                   tp if spectrum.params.nucleus == "H1" else None)
    return tuple(peaks), ann


def process_fid(fid: Fid, config: PipelineConfig, path="<memory>", total_protons=None) -> Processed:
    with _stage("transform", path):
        spec = transform_fid(fid, config)
    with _stage("correct", path):
        phase, corrected, noise = correct_spectrum(spec, config)
    with _stage("annotate", path):
        peaks, ann = annotate_spectrum(corrected, noise, config, total_protons)
    return Processed(corrected, phase, noise, peaks, ann)


# --- tools and report ---------------------------------------------------------

def make_tools(config: PipelineConfig, db: CandidateDatabase | None = None, tables=None) -> ToolBundle:
    tables = tables or load_shift_tables(config.shift_tables)
    if db is None and config.database:
        db = CandidateDatabase.load(config.database)
    return ToolBundle(tables=tables, db=db, generator_factory=lambda s: RandomGenerator(s, tables),
                      assign_config=config.assign, seed=config.seed)


def build_report(processed: dict, trajectory) -> dict:
    """Assemble the JSON report from per-file processing results and the agent trajectory."""
    return {
        "schema": schema.tag("report"),
        "inputs": [{
            "path": path,
            "nucleus": p.annotated.nucleus,
            "processing_log": list(p.spectrum.processing_log),
            "phase": p.phase.phase.to_dict(),
            "phase_low_confidence": p.phase.low_confidence,
            "noise_sigma": p.noise_sigma,
            "peak_count": len(p.peaks),
            "nmr_text": render_nmr_text(p.annotated),
            "annotated": p.annotated.to_dict(),
        } for path, p in processed.items()],
        "ranking": [r.to_dict() for r in trajectory.ranking],
        "trajectory": {
            "policy": trajectory.policy,
            "terminated_by": trajectory.terminated_by,
            "steps": len(trajectory.steps),
            "return": trajectory.stored_return,
            "actions": [s.action["action_type"] for s in trajectory.steps],
        },
    }


def render_report_text(report: dict) -> str:
    lines = []
    for inp in report["inputs"]:
        lines.append(f"# {inp['path']} ({inp['nucleus']})")
        lines.append(f"  phase: phi0={inp['phase']['phi0']:.4f} rad, phi1={inp['phase']['phi1']:.4f} rad"
                     + (" (low confidence)" if inp["phase_low_confidence"] else ""))
        lines.append(f"  noise sigma: {inp['noise_sigma']:.4g}; peaks: {inp['peak_count']}")
        lines.append(f"  {inp['nmr_text']}")
    lines.append("")
    lines.append("Ranked candidates:")
    for k, r in enumerate(report["ranking"], 1):
        hard = "" if r["s_hard"] is None else f"  s_hard={r['s_hard']:.4f}"
        lines.append(f"  {k:2d}. {r['id']:<24s} S={r['S']:.4f}{hard}")
    t = report["trajectory"]
    lines.append("")
    lines.append(f"Agent: {t['policy']}, {t['steps']} steps ({' > '.join(t['actions'])}), "
                 f"terminated by {t['terminated_by']}, return {t['return']:.4f}")
    return "\n".join(lines) + "\n"


def run_pipeline(fid_paths, config: PipelineConfig, total_protons=None, db: CandidateDatabase | None = None):
    """Process every FID, run the configured policy and return ``(report, trajectory)``.

    Configuration problems (missing database, bad window) are raised before
    any file is touched.  Stage failures raise :class:`StageError` naming the
    stage and input path.
    """
    if db is None:
        config.validate(need_db=True)
    else:
        config.validate(need_db=False)
    paths = [str(p) for p in fid_paths]
    if not paths:
        raise ConfigError("no input FIDs")
    processed = {}
    for path in paths:
        with _stage("ingest", path):
            fid = read_fid(path)
        processed[path] = process_fid(fid, config, path, total_protons)
    with _stage("agent", ",".join(paths)):
        tools = make_tools(config, db)
        traj = run_scripted_policy([p.annotated for p in processed.values()], config.policy, tools,
                                   config.reward, config.budget)
    with _stage("report", ",".join(paths)):
        report = build_report(processed, traj)
    return report, traj


def dumps(doc) -> str:
    """Canonical JSON text (sorted keys, fixed separators) so equal reports are byte-identical."""
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"
