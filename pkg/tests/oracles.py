"""Independent reference implementations used as test oracles."""

import itertools
import math

import numpy as np

from nmrx.assign import AssignConfig
from nmrx.match import peak_set_similarity
from nmrx.molecule import SiteGroup
from nmrx.peaks import Multiplet

PATTERNS = ("s", "d", "t", "q", "dd", "m")
NJ = {"s": 0, "m": 0, "d": 1, "t": 1, "q": 1, "dd": 2}


def phi(site, sig, cfg):
    """Compatibility straight from its definition (H1)."""
    d = site.predicted_shift_ppm - sig.center_ppm
    f_d = math.exp(-d * d / (2 * cfg.sigma_delta ** 2))
    a, b = site.expected_multiplicity, sig.pattern
    f_disc = 1.0 if a == b or "m" in (a, b) else cfg.kappa_disc
    ja = sorted(site.predicted_j_hz, reverse=True)
    jb = sorted(sig.j_values_hz, reverse=True)
    n = max(len(ja), len(jb))
    ja += [0.0] * (n - len(ja))
    jb += [0.0] * (n - len(jb))
    dj = sum(abs(x - y) for x, y in zip(ja, jb)) / n if n else 0.0
    f_j = math.exp(-dj * dj / (2 * cfg.tau_j ** 2))
    return max(cfg.floor_phi, f_d * f_disc * f_j)


def brute_force_assignment(sites, signals, cfg: AssignConfig):
    """Enumerate every partial injection; return (min cost, canonical argmin pairs).

    Canonical order among equal costs: the site -> signal vector compared
    lexicographically, with "unassigned" after every signal index.
    """
    n, m = len(sites), len(signals)
    tol = cfg.merge_tolerance_ppm
    site_merged = [any(abs(s.predicted_shift_ppm - o.center_ppm) <= tol for o in signals) for s in sites]
    sig_merged = [any(abs(s.predicted_shift_ppm - o.center_ppm) <= tol for s in sites) for o in signals]
    best = (math.inf, None, None)
    choices = [list(range(m)) + [None]] * n
    for vec in itertools.product(*choices):
        used = [j for j in vec if j is not None]
        if len(used) != len(set(used)):
            continue
        cost = 0.0
        ok = True
        for i, j in enumerate(vec):
            if j is None:
                cost += cfg.lambda_obs * cfg.merged_rate if site_merged[i] else cfg.lambda_cov * cfg.alpha
            else:
                if cfg.enforce_proton_count and sites[i].proton_count != signals[j].integral_protons:
                    ok = False
                    break
                cost += cfg.lambda_match * -math.log(phi(sites[i], signals[j], cfg))
        if not ok:
            continue
        for j in range(m):
            if j not in used:
                cost += cfg.lambda_obs * cfg.merged_rate if sig_merged[j] else cfg.lambda_cov * cfg.beta
        key = tuple(m if j is None else j for j in vec)
        if cost < best[0] - 1e-9 * max(1.0, abs(cost)) or (abs(cost - best[0]) <= 1e-9 * max(1.0, abs(cost))
                                                           and key < best[2]):
            best = (cost, tuple((i, j) for i, j in enumerate(vec) if j is not None), key)
    return best[0], best[1]


def random_instance(rng, max_sites=6, max_signals=6):
    """Random H1 site/signal sets with clustered shifts so matches, merges and conflicts all occur."""
    n = int(rng.integers(1, max_sites + 1))
    m = int(rng.integers(1, max_signals + 1))
    centres = rng.uniform(0, 10, size=max(n, m))
    sites, signals = [], []
    for i in range(n):
        p = PATTERNS[int(rng.integers(len(PATTERNS)))]
        sites.append(SiteGroup((i,), "H1", float(centres[i] + rng.normal(0, 0.1)), int(rng.integers(1, 4)), p,
                               tuple(float(x) for x in rng.uniform(1, 15, NJ[p]))))
    for j in range(m):
        p = PATTERNS[int(rng.integers(len(PATTERNS)))]
        signals.append(Multiplet(float(centres[int(rng.integers(len(centres)))] + rng.normal(0, 0.1)), p,
                                 tuple(float(x) for x in rng.uniform(1, 15, NJ[p])), int(rng.integers(1, 4))))
    cfg = AssignConfig(alpha=float(rng.uniform(0.5, 4)), beta=float(rng.uniform(0.5, 4)),
                       merged_rate=float(rng.uniform(0.1, 1)), merge_tolerance_ppm=float(rng.uniform(0, 0.2)),
                       lambda_match=float(rng.uniform(0.5, 2)), lambda_cov=float(rng.uniform(0.5, 2)),
                       lambda_obs=float(rng.uniform(0.5, 2)))
    return sites, signals, cfg


def agree(sites, signals, cfg, assignment):
    cost, pairs = brute_force_assignment(sites, signals, cfg)
    return (np.isclose(assignment.total_cost, cost, rtol=1e-9, atol=1e-9) and assignment.pairs == pairs,
            cost, pairs)


def exhaustive_search(query, db, k):
    """Rank every database entry by mean peak-set similarity; ties by id."""
    rows = []
    for e in db.entries:
        sims = [peak_set_similarity(q, e.signals(q.nucleus)) for q in query]
        rows.append((-float(np.mean(sims)), e.candidate.id))
    return [(cid, -s) for s, cid in sorted(rows)[:k]]
