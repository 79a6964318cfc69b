"""Site-to-signal assignment, candidate scoring and reranking."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (EmptyPool, InvariantViolation, NoFeasibleAssignment, NucleusMismatch,
                     TooFewScores)
from .molecule import CandidateStructure, SiteGroup
from .peaks import AnnotatedSpectrum, Multiplet


@dataclass(frozen=True)
class AssignConfig:
    """Weights and tolerances of the assignment cost.

    ``sigma_delta`` applies to H1 and ``sigma_delta_c13`` to C13 (ppm);
    likewise for the merge tolerance.  ``merged_rate`` is the observation-term
    charge, in place of alpha or beta, for an unmatched site or signal that a
    signal or site within the merge tolerance can account for.
    """

    sigma_delta: float = 0.2
    sigma_delta_c13: float = 2.0
    kappa_disc: float = 0.3
    tau_j: float = 1.0
    lambda_match: float = 1.0
    lambda_cov: float = 1.0
    lambda_obs: float = 1.0
    alpha: float = 2.0
    beta: float = 2.0
    merged_rate: float = 0.5
    merge_tolerance_ppm: float = 0.05
    merge_tolerance_ppm_c13: float = 0.5
    floor_phi: float = 1e-12
    enforce_proton_count: bool = True

    def __post_init__(self):
        if not (self.sigma_delta > 0 and self.sigma_delta_c13 > 0):
            raise InvariantViolation("sigma_delta must be positive")
        if not 0 < self.kappa_disc <= 1:
            raise InvariantViolation("kappa_disc must lie in (0, 1]")
        if not self.floor_phi > 0:
            raise InvariantViolation("floor_phi must be positive")
        if not self.tau_j > 0:
            raise InvariantViolation("tau_j must be positive")
        for name in ("lambda_match", "lambda_cov", "lambda_obs", "alpha", "beta", "merged_rate",
                     "merge_tolerance_ppm", "merge_tolerance_ppm_c13"):
            if getattr(self, name) < 0:
                raise InvariantViolation(f"{name} must be non-negative")

    def sigma(self, nucleus):
        return self.sigma_delta if nucleus == "H1" else self.sigma_delta_c13

    def merge_tol(self, nucleus):
        return self.merge_tolerance_ppm if nucleus == "H1" else self.merge_tolerance_ppm_c13

    @classmethod
    def from_dict(cls, d: dict) -> "AssignConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvariantViolation(f"unknown assign settings: {sorted(extra)}")
        return cls(**d)


def _j_distance(a: Sequence[float], b: Sequence[float]) -> float:
    a = sorted(a, reverse=True)
    b = sorted(b, reverse=True)
    n = max(len(a), len(b))
    if n == 0:
        return 0.0
    a = a + [0.0] * (n - len(a))
    b = b + [0.0] * (n - len(b))
    return sum(abs(x - y) for x, y in zip(a, b)) / n


def compatibility(site: SiteGroup, signal: Multiplet, config: AssignConfig, nucleus: str | None = None) -> float:
    """phi = max(floor, phi_delta * phi_disc * phi_J), each factor in (0, 1]."""
    if nucleus is not None and site.nucleus != nucleus:
        raise NucleusMismatch(f"site is {site.nucleus}, signal is {nucleus}")
    sig = config.sigma(site.nucleus)
    d = site.predicted_shift_ppm - signal.center_ppm
    phi_d = math.exp(-d * d / (2 * sig * sig))
    pm, om = site.expected_multiplicity, signal.pattern
    if site.nucleus == "C13":
        pm = om  # decoupled carbon lines carry no multiplicity information
    phi_disc = 1.0 if (pm == om or pm == "m" or om == "m") else config.kappa_disc
    dj = _j_distance(list(site.predicted_j_hz), list(signal.j_values_hz)) if site.nucleus == "H1" else 0.0
    phi_j = math.exp(-dj * dj / (2 * config.tau_j ** 2))
    return max(config.floor_phi, phi_d * phi_disc * phi_j)


@dataclass(frozen=True)
class Assignment:
    pairs: tuple  # sorted (site, signal)
    unassigned_sites: tuple
    unexplained_signals: tuple
    total_cost: float
    breakdown: dict
    nucleus: str = "H1"

    def to_dict(self):
        return {"nucleus": self.nucleus, "pairs": [list(p) for p in self.pairs],
                "unassigned_sites": list(self.unassigned_sites),
                "unexplained_signals": list(self.unexplained_signals),
                "total_cost": self.total_cost, "breakdown": dict(self.breakdown)}


@dataclass(frozen=True)
class CostModel:
    """Separable costs of one site/signal instance (all finite or +inf)."""

    pair: np.ndarray      # n x m, lambda_match-free pair cost -ln(phi), inf when infeasible
    site_miss: np.ndarray  # n, (term, raw) per site
    site_term: tuple
    signal_miss: np.ndarray
    signal_term: tuple
    config: AssignConfig

    @property
    def shape(self):
        return self.pair.shape


def cost_model(sites: Sequence[SiteGroup], signals: Sequence[Multiplet], nucleus: str,
               config: AssignConfig) -> CostModel:
    n, m = len(sites), len(signals)
    pair = np.empty((n, m))
    for i, s in enumerate(sites):
        for j, o in enumerate(signals):
            if (nucleus == "H1" and config.enforce_proton_count
                    and s.proton_count != o.integral_protons):
                pair[i, j] = math.inf
            else:
                pair[i, j] = -math.log(compatibility(s, o, config))
    tol = config.merge_tol(nucleus)
    site_miss, site_term = np.empty(n), []
    for i, s in enumerate(sites):
        merged = any(abs(s.predicted_shift_ppm - o.center_ppm) <= tol for o in signals)
        site_term.append("observation" if merged else "coverage")
        site_miss[i] = config.merged_rate if merged else config.alpha
    sig_miss, sig_term = np.empty(m), []
    for j, o in enumerate(signals):
        merged = any(abs(s.predicted_shift_ppm - o.center_ppm) <= tol for s in sites)
        sig_term.append("observation" if merged else "coverage")
        sig_miss[j] = config.merged_rate if merged else config.beta
    return CostModel(pair, site_miss, tuple(site_term), sig_miss, tuple(sig_term), config)


def evaluate(model: CostModel, pairs) -> dict:
    """Exact breakdown and total of a pair set under ``model``."""
    n, m = model.shape
    cfg = model.config
    match = 0.0
    a_sites = {i for i, _ in pairs}
    a_sigs = {j for _, j in pairs}
    for i, j in sorted(pairs):
        match += model.pair[i, j]
    cov = obs = 0.0
    for i in range(n):
        if i not in a_sites:
            if model.site_term[i] == "observation":
                obs += model.site_miss[i]
            else:
                cov += model.site_miss[i]
    for j in range(m):
        if j not in a_sigs:
            if model.signal_term[j] == "observation":
                obs += model.signal_miss[j]
            else:
                cov += model.signal_miss[j]
    total = cfg.lambda_match * match + cfg.lambda_cov * cov + cfg.lambda_obs * obs
    return {"match": match, "coverage": cov, "observation": obs, "total": total}


def _weighted(model: CostModel):
    cfg = model.config
    n, m = model.shape
    pair = cfg.lambda_match * model.pair
    pair = np.where(np.isinf(model.pair), math.inf, pair)
    lam = {"coverage": cfg.lambda_cov, "observation": cfg.lambda_obs}
    sm = np.array([lam[t] * c for t, c in zip(model.site_term, model.site_miss)])
    gm = np.array([lam[t] * c for t, c in zip(model.signal_term, model.signal_miss)])
    return pair, sm, gm


def _solve(pair, sm, gm, forced: dict):
    """Min-cost partial injection via the padded (n+m) square matrix.

    ``forced`` maps site -> signal index or -1 (unassigned).  Returns
    (cost, pairs) or (inf, None) when infeasible.
    """
    n, m = pair.shape
    N = n + m
    big = math.inf
    C = np.full((N, N), big)
    C[:n, :m] = pair
    for i in range(n):
        C[i, m + i] = sm[i]
    for j in range(m):
        C[n + j, j] = gm[j]
    C[n:, m:] = 0.0
    for i, j in forced.items():
        keep_col = m + i if j < 0 else j
        saved = C[i, keep_col]
        C[i, :] = big
        C[i, keep_col] = saved
        if j >= 0:
            col = C[:, j].copy()
            C[:, j] = big
            C[i, j] = col[i]
    finite = np.isfinite(C)
    if not finite.any():
        return math.inf, None
    # replace inf by a cost no feasible solution can reach, then check
    span = float(np.abs(C[finite]).sum()) + 1.0
    Cf = np.where(finite, C, span * 4 + 1e6)
    try:
        r, c = linear_sum_assignment(Cf)
    except ValueError:
        return math.inf, None
    if not np.all(finite[r, c]):
        return math.inf, None
    pairs = tuple(sorted((int(i), int(j)) for i, j in zip(r, c) if i < n and j < m))
    return float(C[r, c].sum()), pairs


def solve_assignment(model: CostModel) -> tuple:
    """Exact optimum with ties broken toward the lexicographically smallest pair set.

    Sites are fixed in index order, each to the smallest signal index (then
    "unassigned") that keeps the optimum; returns the sorted pair tuple.
    """
    pair, sm, gm = _weighted(model)
    n, m = pair.shape
    best, pairs = _solve(pair, sm, gm, {})
    if pairs is None:
        raise NoFeasibleAssignment("no finite-cost assignment exists")
    tol = 1e-9 * max(1.0, abs(best))
    forced: dict = {}
    current = dict(pairs)
    for i in range(n):
        for j in list(range(m)) + [-1]:
            if j >= 0 and (not math.isfinite(pair[i, j]) or j in forced.values()):
                continue
            if j < 0 and not math.isfinite(sm[i]):
                continue
            trial = dict(forced)
            trial[i] = j
            if current.get(i, -1) == j and all(current.get(k, -1) == v for k, v in forced.items()):
                forced = trial
                break
            cost, p = _solve(pair, sm, gm, trial)
            if p is not None and cost <= best + tol:
                forced = trial
                current = dict(p)
                break
    return tuple(sorted((i, j) for i, j in forced.items() if j >= 0))


def assign_sites(sites: Sequence[SiteGroup], signals: Sequence[Multiplet], nucleus: str,
                 config: AssignConfig) -> Assignment:
    model = cost_model(sites, signals, nucleus, config)
    pairs = solve_assignment(model)
    br = evaluate(model, pairs)
    used_i = {i for i, _ in pairs}
    used_j = {j for _, j in pairs}
    return Assignment(pairs, tuple(i for i in range(len(sites)) if i not in used_i),
                      tuple(j for j in range(len(signals)) if j not in used_j), br["total"],
                      {k: br[k] for k in ("match", "coverage", "observation")}, nucleus)


def optimal_assignment(candidate: CandidateStructure, signals: AnnotatedSpectrum,
                       config: AssignConfig | None = None) -> Assignment:
    """Exact minimum-cost assignment of the candidate's sites to the observed multiplets."""
    config = config or AssignConfig()
    nuc = signals.nucleus
    return assign_sites(candidate.sites(nuc), signals.multiplets, nuc, config)


def _observations(signals) -> list:
    if isinstance(signals, AnnotatedSpectrum):
        return [signals]
    return list(signals)


def score_candidate(candidate: CandidateStructure, signals, config: AssignConfig | None = None) -> float:
    """S(c): optimal assignment cost, summed over the supplied nuclei."""
    return score_details(candidate, signals, config)[0]


def score_details(candidate, signals, config=None):
    config = config or AssignConfig()
    asg = [optimal_assignment(candidate, obs, config) for obs in _observations(signals)]
    return float(sum(a.total_cost for a in asg)), asg


@dataclass(frozen=True)
class RankedCandidate:
    candidate: CandidateStructure
    score: float
    assignments: tuple = ()
    s_hard: float | None = None

    def to_dict(self):
        return {"id": self.candidate.id, "S": self.score, "s_hard": self.s_hard,
                "provenance": self.candidate.provenance,
                "breakdown": {a.nucleus: a.breakdown for a in self.assignments},
                "assignments": [a.to_dict() for a in self.assignments]}


def detect_near_tie(scores: Sequence[float], relative_margin: float = 0.05) -> bool:
    """True iff the two lowest scores differ by less than ``margin * (|S1| + 1)``."""
    if len(scores) < 2:
        raise TooFewScores("need at least two scores")
    s = sorted(scores)
    return (s[1] - s[0]) / (abs(s[0]) + 1.0) < relative_margin


def rerank(candidates: Sequence[CandidateStructure], signals, config: AssignConfig | None = None,
           use_hard_case: bool = False, relative_margin: float = 0.05, kappa: float = 1.0) -> list[RankedCandidate]:
    """Candidates by ascending S, ties by id; the first entry is c*.

    With ``use_hard_case`` and a near tie at the top, the leading run of
    near-tied candidates is reordered by the hyperbolic consistency score
    (higher first).  Nothing outside that run moves.
    """
    if not candidates:
        raise EmptyPool("no candidates to rank")
    ranked = []
    for c in candidates:
        s, asg = score_details(c, signals, config)
        ranked.append(RankedCandidate(c, s, tuple(asg)))
    ranked.sort(key=lambda r: (r.score, r.candidate.id))
    if use_hard_case and len(ranked) >= 2 and detect_near_tie([r.score for r in ranked], relative_margin):
        from .hyperbolic import spectrum_consistency
        s1 = ranked[0].score
        run = [r for r in ranked if (r.score - s1) / (abs(s1) + 1.0) < relative_margin]
        scored = [RankedCandidate(r.candidate, r.score, r.assignments,
                                  spectrum_consistency(r.candidate, signals, kappa)) for r in run]
        scored.sort(key=lambda r: (-r.s_hard, r.score, r.candidate.id))
        ranked = scored + ranked[len(run):]
    return ranked
