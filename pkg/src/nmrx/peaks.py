"""Peak picking, multiplet classification and NMR text rendering."""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from .errors import MalformedDocument, NotCorrected
from .fid import AcquisitionParams
from .transform import Spectrum

PATTERNS = ("s", "d", "t", "q", "dd", "td", "dt", "ddd", "m")


@dataclass(frozen=True)
class Peak:
    """One resolved line.  ``area`` is in intensity x Hz, ``width_hz`` is the FWHM."""

    shift_ppm: float
    intensity: float
    width_hz: float
    area: float
    left_bound_ppm: float
    right_bound_ppm: float
    merged_maxima: int = 0  # extra local maxima absorbed into this peak's segment

    def to_dict(self):
        return {
            "shift_ppm": self.shift_ppm, "intensity": self.intensity, "width_hz": self.width_hz,
            "area": self.area, "left_bound_ppm": self.left_bound_ppm,
            "right_bound_ppm": self.right_bound_ppm, "merged_maxima": self.merged_maxima,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("shift_ppm", "intensity", "width_hz", "area",
                                         "left_bound_ppm", "right_bound_ppm")},
                   merged_maxima=d.get("merged_maxima", 0))


# --- detection ----------------------------------------------------------------

PROMINENCE_SIGMA = 5.0
# zero-filled lines always span more than one bin; narrower hits are noise spikes
MIN_WIDTH_BINS = 1.0


def _segment(y: np.ndarray, apexes: np.ndarray, all_max: np.ndarray, noise: float):
    """Split the axis around accepted apexes (sorted by position).

    Neighbouring apexes are separated at the lowest bin between them; the
    outer edges walk away from the apex until the signal drops below
    ``noise``.  Returns rows ``[apex, lo, hi, merged]`` where ``merged``
    counts rejected local maxima that fall inside the segment.
    """
    n = len(y)
    segs = []
    for k, apex in enumerate(apexes):
        if k > 0:
            lo = segs[-1][2] + 1
        else:
            lo = apex
            while lo > 0 and y[lo - 1] >= noise:
                lo -= 1
        if k + 1 < len(apexes):
            nxt = apexes[k + 1]
            hi = apex + int(np.argmin(y[apex:nxt + 1]))
            if hi == nxt:
                hi = nxt - 1
        else:
            hi = apex
            while hi < n - 1 and y[hi + 1] >= noise:
                hi += 1
        lo = min(lo, apex)
        hi = max(hi, apex)
        inside = np.count_nonzero((all_max >= lo) & (all_max <= hi)) - 1
        segs.append([int(apex), int(lo), int(hi), max(int(inside), 0)])
    return segs


def _half_width_bins(y, apex, lo, hi, height):
    half = height / 2
    left = float(lo)
    for j in range(apex, lo, -1):
        if y[j - 1] <= half:
            left = (j - 1) + (half - y[j - 1]) / (y[j] - y[j - 1])
            break
    right = float(hi)
    for j in range(apex, hi):
        if y[j + 1] <= half:
            right = j + (y[j] - half) / (y[j] - y[j + 1])
            break
    return max(right - left, 1e-6)


def _lorentzians(p, x):
    out = np.zeros_like(x)
    for a, c, g in p.reshape(-1, 3):
        out += a / (1 + ((x - c) / (g / 2)) ** 2)
    return out


def _fit_region(y, segs, widths, n):
    """Joint sum-of-Lorentzians fit over adjacent segments.  Returns rows of (A, centre, FWHM) in bins."""
    lo = min(s[1] for s in segs)
    hi = max(s[2] for s in segs)
    pad = int(min(max(3 * max(widths), 5), 200))
    a, b = max(0, lo - pad), min(n, hi + pad + 1)
    x = np.arange(a, b, dtype=float)
    p0, lb, ub = [], [], []
    for (apex, slo, shi, _), w in zip(segs, widths):
        p0 += [y[apex], float(apex), max(w, 0.5)]
        lb += [0.0, slo - 0.5, 0.05]
        ub += [np.inf, shi + 0.5, 4.0 * (b - a)]
    p0 = np.clip(p0, np.array(lb) + 1e-9, np.array(ub) - 1e-9)
    res = least_squares(lambda p: _lorentzians(p, x) - y[a:b], p0, bounds=(lb, ub),
                        x_scale="jac", max_nfev=200 * len(p0))
    if not res.success:
        return None
    rows = res.x.reshape(-1, 3)
    if np.any(rows[:, 0] <= 0) or np.any(rows[:, 2] <= 0):
        return None
    return rows


def detect_peaks(spectrum: Spectrum, noise: float, threshold_sigma: float = 5.0,
                 refine: bool = True) -> list[Peak]:
    """Pick peaks on the real part of a phased, baseline-corrected spectrum.

    Candidates are local maxima above ``threshold_sigma * noise`` that also
    stand at least 5 noise units above the valleys separating them from taller
    neighbours (topographic prominence), which stops noise ripples on a broad
    line's flank from splitting it.  Segments are cut at the valley minima
    (see :func:`_segment`); the raw width is from linearly interpolated
    half-maximum crossings and the raw area a trapezoid sum over the segment.
    With ``refine`` (the default) each run of touching segments is fitted
    jointly with Lorentzians and shift, height, FWHM and area
    (pi * A * FWHM / 2) come from the fit, which keeps the sub-noise tails the
    trapezoid misses.  A failed fit falls back to the raw values.

    Raises
    ------
    NotCorrected
        The processing log lacks a phase or baseline step.
    """
    if not (spectrum.has_step("phase") and spectrum.has_step("baseline")):
        raise NotCorrected("spectrum must be phase- and baseline-corrected before peak picking")
    y = spectrum.real
    n = len(y)
    if n < 3:
        return []
    thr = threshold_sigma * noise
    inner = y[1:-1]
    all_max = np.where((inner > y[:-2]) & (inner >= y[2:]) & (inner > thr))[0] + 1
    apexes, _ = find_peaks(y, height=thr, prominence=max(PROMINENCE_SIGMA * noise, 1e-300))
    if len(apexes) == 0:
        return []
    segs = _segment(y, np.sort(apexes), all_max, noise)

    hz = spectrum.hz_per_point
    ax = spectrum.ppm_axis
    dppm = hz / spectrum.params.spectrometer_frequency
    raw = []
    for apex, lo, hi, merged in segs:
        height = y[apex]
        w = _half_width_bins(y, apex, lo, hi, height)
        # parabolic apex interpolation
        c = float(apex)
        if 0 < apex < n - 1:
            den = y[apex - 1] - 2 * y[apex] + y[apex + 1]
            if den < 0:
                c = apex + 0.5 * (y[apex - 1] - y[apex + 1]) / den
        area = float(np.trapezoid(y[lo:hi + 1]) * hz) if hi > lo else float(height * hz)
        raw.append([height, c, w, area])

    if refine:
        idx = sorted(range(len(segs)), key=lambda k: segs[k][1])
        groups, cur = [], [idx[0]]
        for k in idx[1:]:
            if segs[k][1] <= segs[cur[-1]][2] + 1:
                cur.append(k)
            else:
                groups.append(cur)
                cur = [k]
        groups.append(cur)
        for g in groups:
            g = list(g)
            while g:
                try:
                    rows = _fit_region(y, [segs[k] for k in g], [raw[k][2] for k in g], n)
                except (ValueError, np.linalg.LinAlgError):
                    rows = None
                if rows is None:
                    break
                # a component the joint fit cannot hold above threshold is a ripple on a
                # neighbour's tail: drop the weakest one and refit the rest
                bad = [i for i, (A, _, w) in enumerate(rows) if A < thr or w < MIN_WIDTH_BINS]
                if not bad:
                    for k, (A, c, w) in zip(g, rows):
                        raw[k] = [A, c, w, math.pi * A * w * hz / 2]
                    break
                worst = min(bad, key=lambda i: rows[i][0])
                raw[g.pop(worst)] = None

    # a dropped ripple's bins go to the nearest kept neighbour, recorded as a merge
    kept = [k for k in range(len(segs)) if raw[k] is not None]
    for k in range(len(segs)):
        if raw[k] is None and kept:
            t = min(kept, key=lambda i: (abs(segs[i][0] - segs[k][0]), i))
            segs[t][1] = min(segs[t][1], segs[k][1])
            segs[t][2] = max(segs[t][2], segs[k][2])
            segs[t][3] += 1 + segs[k][3]

    peaks = []
    for (apex, lo, hi, merged), vals in zip(segs, raw):
        if vals is None:
            continue
        height, c, w, area = vals
        c = min(max(c, lo - 0.49), hi + 0.49)
        shift = float(np.interp(c, np.arange(n), ax)) if 0 <= c <= n - 1 else float(ax[apex] - (c - apex) * dppm)
        if height <= 0 or area <= 0 or w < MIN_WIDTH_BINS:
            continue
        peaks.append(Peak(
            shift_ppm=shift, intensity=float(height), width_hz=float(w * hz), area=float(area),
            left_bound_ppm=float(ax[lo] + dppm / 2), right_bound_ppm=float(ax[hi] - dppm / 2),
            merged_maxima=int(merged),
        ))
    peaks.sort(key=lambda p: -p.shift_ppm)
    return peaks


def group_multiplets(peaks: Sequence[Peak], sf_mhz: float, gap_hz: float = 18.0) -> list[list[Peak]]:
    """Split a ppm-sorted peak list wherever neighbouring apexes are more than ``gap_hz`` apart."""
    clusters: list[list[Peak]] = []
    for p in peaks:
        if clusters and abs(clusters[-1][-1].shift_ppm - p.shift_ppm) * sf_mhz <= gap_hz:
            clusters[-1].append(p)
        else:
            clusters.append([p])
    return clusters


# --- multiplets ----------------------------------------------------------------

@dataclass(frozen=True)
class Multiplet:
    center_ppm: float
    pattern: str
    j_values_hz: tuple = ()
    integral_protons: int = 1
    member_peaks: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise MalformedDocument(f"unknown multiplet pattern {self.pattern!r}")
        object.__setattr__(self, "j_values_hz", tuple(sorted((float(j) for j in self.j_values_hz), reverse=True)))
        object.__setattr__(self, "member_peaks", tuple(self.member_peaks))

    @property
    def area(self) -> float:
        return float(sum(p.area for p in self.member_peaks))

    def to_dict(self):
        return {
            "center_ppm": self.center_ppm, "pattern": self.pattern,
            "j_values_hz": list(self.j_values_hz), "integral_protons": self.integral_protons,
            "member_peaks": [p.to_dict() for p in self.member_peaks],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(float(d["center_ppm"]), d["pattern"], tuple(d.get("j_values_hz", ())),
                       int(d.get("integral_protons", 1)),
                       tuple(Peak.from_dict(p) for p in d.get("member_peaks", ())))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDocument(f"bad multiplet: {exc}") from None


@dataclass(frozen=True)
class ClassifierConfig:
    j_tol: float = 0.5  # Hz, line-position tolerance
    ratio_tol: float = 0.25  # relative tolerance on normalised line intensities
    merge_hz: float = 0.25  # predicted lines closer than this are one observed line
    max_lines: int = 8


class MultipletClassifier(Protocol):
    def classify(self, cluster: Sequence[Peak], sf_mhz: float) -> Multiplet: ...


# Each pattern is a tuple of (J slot, multiplicity) splittings; slots are
# ordered so slot 0 carries the largest J.
_SPLITTINGS = {
    "d": ((0, 1),),
    "t": ((0, 2),),
    "q": ((0, 3),),
    "dd": ((0, 1), (1, 1)),
    "td": ((0, 2), (1, 1)),
    "dt": ((0, 1), (1, 2)),
    "ddd": ((0, 1), (1, 1), (2, 1)),
}
_ORDER = ("d", "t", "q", "dd", "td", "dt", "ddd")


def _pattern_lines(pattern, js, merge_hz):
    """Forward splitting tree: (offset_hz, weight, coefficient row) for each resolved line."""
    lines = [(0.0, 1.0, np.zeros(len(js)))]
    for slot, mult in _SPLITTINGS[pattern]:
        nxt = []
        for off, w, coef in lines:
            for k in range(mult + 1):
                step = k - mult / 2
                c = coef.copy()
                c[slot] += step
                nxt.append((off + step * js[slot], w * math.comb(mult, k), c))
        lines = nxt
    lines.sort(key=lambda t: t[0])
    merged = []
    for off, w, coef in lines:
        if merged and off - merged[-1][0][-1] < merge_hz:
            merged[-1][0].append(off)
            merged[-1][1] += w
        else:
            merged.append([[off], w, coef])
    return [(float(np.mean(offs)), w, coef) for offs, w, coef in merged]


class RuleClassifier:
    """Deterministic multiplet classifier.

    Candidate couplings are the spacings between the lowest-frequency line and
    every other line.  For each pattern (simplest first) and each assignment
    of candidate couplings, the splitting tree is built, the couplings and
    centre are refined by linear least squares against the observed lines,
    and the match is accepted when every line lies within ``j_tol`` and every
    normalised intensity within ``ratio_tol`` (relative) of the prediction.
    The first pattern with an accepted match wins; among its matches the
    smallest RMS residual wins.  No match gives ``m``.
    """

    def __init__(self, config: ClassifierConfig | None = None):
        self.config = config or ClassifierConfig()

    def _try(self, pattern, js, pos, inten):
        cfg = self.config
        lines = _pattern_lines(pattern, js, cfg.merge_hz)
        if len(lines) != len(pos):
            return None
        coef = np.array([c for _, _, c in lines])
        A = np.hstack([np.ones((len(pos), 1)), coef])
        sol, *_ = np.linalg.lstsq(A, pos, rcond=None)
        refined = sol[1:]
        if np.any(refined <= 0):
            return None
        lines = _pattern_lines(pattern, refined, cfg.merge_hz)
        if len(lines) != len(pos):
            return None
        pred = sol[0] + np.array([o for o, _, _ in lines])
        resid = pos - pred
        if np.max(np.abs(resid)) > cfg.j_tol:
            return None
        w = np.array([wt for _, wt, _ in lines])
        w = w / w.sum()
        if np.any(np.abs(inten - w) > cfg.ratio_tol * w):
            return None
        return float(np.sqrt(np.mean(resid ** 2))), float(sol[0]), refined

    def classify(self, cluster: Sequence[Peak], sf_mhz: float) -> Multiplet:
        cfg = self.config
        peaks = sorted(cluster, key=lambda p: p.shift_ppm)
        if not peaks:
            raise ValueError("empty cluster")
        pos = np.array([p.shift_ppm * sf_mhz for p in peaks])
        origin = pos[0]
        pos = pos - origin
        inten = np.array([p.intensity for p in peaks], dtype=float)
        n = len(peaks)
        if n == 1:
            return Multiplet(peaks[0].shift_ppm, "s", (), 1, tuple(peaks[::-1]))
        if n <= cfg.max_lines and inten.sum() > 0:
            inten = inten / inten.sum()
            diffs = pos[1:] - pos[0]
            for pattern in _ORDER:
                nslots = len({s for s, _ in _SPLITTINGS[pattern]})
                best = None
                for combo in itertools.combinations(range(len(diffs)), nslots):
                    js = diffs[list(combo)][::-1]  # slot 0 carries the largest J
                    got = self._try(pattern, js, pos, inten)
                    if got is not None and (best is None or got[0] < best[0] - 1e-12):
                        best = got
                if best is not None:
                    _, centre, js = best
                    if np.any(np.diff(js) >= 0) if len(js) > 1 else False:
                        continue
                    return Multiplet(float((centre + origin) / sf_mhz), pattern,
                                     tuple(float(j) for j in js), 1, tuple(peaks[::-1]))
        w = np.array([p.intensity for p in peaks], dtype=float)
        centre = float(np.dot(w, pos) / w.sum()) if w.sum() > 0 else float(pos.mean())
        return Multiplet(float((centre + origin) / sf_mhz), "m", (), 1, tuple(peaks[::-1]))


def classify_multiplet(cluster: Sequence[Peak], sf_mhz: float,
                       config: ClassifierConfig | None = None) -> Multiplet:
    return RuleClassifier(config).classify(cluster, sf_mhz)


# --- annotation ---------------------------------------------------------------

@dataclass(frozen=True)
class AnnotatedSpectrum:
    multiplets: tuple
    params: AcquisitionParams
    noise_sigma: float = 0.0

    def __post_init__(self):
        ms = tuple(sorted(self.multiplets, key=lambda m: -m.center_ppm))
        object.__setattr__(self, "multiplets", ms)

    @property
    def nucleus(self) -> str:
        return self.params.nucleus

    def to_dict(self):
        from . import schema
        return {
            "schema": schema.tag("annotated"),
            "params": self.params.to_dict(),
            "noise_sigma": self.noise_sigma,
            "multiplets": [m.to_dict() for m in self.multiplets],
            "text": render_nmr_text(self),
        }

    @classmethod
    def from_dict(cls, doc):
        from . import schema
        if not isinstance(doc, dict):
            raise MalformedDocument("annotated document must be an object")
        schema.check(doc, "annotated")
        try:
            return cls(tuple(Multiplet.from_dict(m) for m in doc["multiplets"]),
                       AcquisitionParams.from_dict(doc["params"]), float(doc.get("noise_sigma", 0.0)))
        except (KeyError, TypeError) as exc:
            raise MalformedDocument(f"bad annotated document: {exc}") from None


def assign_integrals(multiplets: Sequence[Multiplet], total_protons: int | None = None) -> list[Multiplet]:
    """Set ``integral_protons`` from member areas.

    Without ``total_protons`` the smallest multiplet is taken as 1H; with it,
    areas are scaled so they sum to ``total_protons``.  Counts are rounded to
    the nearest positive integer.
    """
    from dataclasses import replace

    if not multiplets:
        return []
    areas = np.array([m.area for m in multiplets], dtype=float)
    if total_protons:
        unit = areas.sum() / total_protons
    else:
        unit = areas.min()
    if not unit > 0:
        return [replace(m, integral_protons=1) for m in multiplets]
    return [replace(m, integral_protons=max(1, int(round(a / unit)))) for m, a in zip(multiplets, areas)]


def annotate(peaks: Sequence[Peak], params: AcquisitionParams, noise: float,
             classifier: MultipletClassifier | None = None, gap_hz: float = 18.0,
             total_protons: int | None = None) -> AnnotatedSpectrum:
    """Group, classify and integrate peaks.  Carbon lines are reported one singlet per peak."""
    sf = params.spectrometer_frequency
    if params.nucleus == "C13":
        ms = [Multiplet(p.shift_ppm, "s", (), 1, (p,)) for p in peaks]
        return AnnotatedSpectrum(tuple(ms), params, noise)
    classifier = classifier or RuleClassifier()
    ms = [classifier.classify(c, sf) for c in group_multiplets(peaks, sf, gap_hz)]
    return AnnotatedSpectrum(tuple(assign_integrals(ms, total_protons)), params, noise)


# --- text ---------------------------------------------------------------------

_NUC_LABEL = {"H1": "1H", "C13": "13C"}
_LABEL_NUC = {v: k for k, v in _NUC_LABEL.items()}


def _fmt_j(j):
    return f"{j:.1f}"


def render_nmr_text(annotated: AnnotatedSpectrum) -> str:
    """Standard one-line report, e.g. ``1H NMR (400 MHz, CDCl3): 3.78 (s, 3H)``."""
    p = annotated.params
    head = f"{_NUC_LABEL[p.nucleus]} NMR ({int(round(p.spectrometer_frequency))} MHz, {p.solvent}): "
    parts = []
    for m in annotated.multiplets:
        if p.nucleus == "C13":
            parts.append(f"{m.center_ppm:.1f}")
        elif m.pattern in ("s", "m") or not m.j_values_hz:
            parts.append(f"{m.center_ppm:.2f} ({m.pattern}, {m.integral_protons}H)")
        else:
            js = ", ".join(_fmt_j(j) for j in m.j_values_hz)
            parts.append(f"{m.center_ppm:.2f} ({m.pattern}, J = {js} Hz, {m.integral_protons}H)")
    return head + ", ".join(parts)


_HEAD = re.compile(r"^(1H|13C) NMR \((\d+) MHz, ([^)]*)\): (.*)$", re.S)
_H_ENTRY = re.compile(
    r"(-?\d+\.\d{2}) \((s|d|t|q|dd|td|dt|ddd|m)(?:, J = ((?:\d+\.\d(?:, )?)+) Hz)?, (\d+)H\)")
_C_ENTRY = re.compile(r"-?\d+\.\d")


def parse_nmr_text(text: str) -> AnnotatedSpectrum:
    """Inverse of :func:`render_nmr_text` on strings it produces."""
    m = _HEAD.match(text)
    if not m:
        raise MalformedDocument("not an NMR text line")
    label, mhz, solvent, body = m.groups()
    nucleus = _LABEL_NUC[label]
    params = AcquisitionParams(float(mhz), 1.0, 2, nucleus, solvent)
    mults = []
    if body:
        if nucleus == "C13":
            for tok in body.split(", "):
                if not _C_ENTRY.fullmatch(tok):
                    raise MalformedDocument(f"bad carbon entry {tok!r}")
                mults.append(Multiplet(float(tok), "s"))
        else:
            pos = 0
            while pos < len(body):
                e = _H_ENTRY.match(body, pos)
                if not e:
                    raise MalformedDocument(f"bad entry at {body[pos:pos + 30]!r}")
                shift, pat, js, nh = e.groups()
                jv = tuple(float(j) for j in js.split(", ")) if js else ()
                mults.append(Multiplet(float(shift), pat, jv, int(nh)))
                pos = e.end()
                if body.startswith(", ", pos):
                    pos += 2
                elif pos != len(body):
                    raise MalformedDocument("entries must be separated by ', '")
    return AnnotatedSpectrum(tuple(mults), params)
