"""Synthetic molecules, candidate libraries and FIDs for tests, demos and planted-solution runs."""

from __future__ import annotations

import itertools
import math

import numpy as np

from .fid import AcquisitionParams, Fid
from .molecule import (Atom, Bond, CandidateStructure, MoleculeGraph, SignalSet, build_candidate,
                       load_shift_tables, simulate_spectrum)
from .peaks import _pattern_lines

# substituent name -> (ring-carbon class, builder of the substituent atoms)
SUBSTITUENTS = ("OMe", "Cl", "Br", "CHO", "COOEt", "COOMe", "Me", "Et", "Ac", "OH", "NH2")
_RING_CLASS = {"OMe": "ArC_OMe", "Cl": "ArC_Cl", "Br": "ArC_Br", "CHO": "ArC_CHO", "COOEt": "ArC_COOR",
               "COOMe": "ArC_COOR", "Me": "ArC_alkyl", "Et": "ArC_alkyl", "Ac": "ArC_acyl",
               "OH": "ArC_OH", "NH2": "ArC_N"}


class _Builder:
    def __init__(self):
        self.atoms: list[Atom] = []
        self.bonds: list[Bond] = []

    def add(self, element, h=0, cls=""):
        self.atoms.append(Atom(element, h, cls))
        return len(self.atoms) - 1

    def bond(self, a, b, order=1):
        self.bonds.append(Bond(a, b, order))

    def chain(self, at, spec):
        """Attach a linear chain of (element, H, class, bond order) starting at ``at``."""
        prev = at
        for el, h, cls, order in spec:
            k = self.add(el, h, cls)
            self.bond(prev, k, order)
            prev = k
        return prev

    def substituent(self, at, name):
        if name == "OMe":
            self.chain(at, [("O", 0, "O_ether", 1), ("C", 3, "CH3_OMe", 1)])
        elif name in ("Cl", "Br"):
            self.chain(at, [(name, 0, name, 1)])
        elif name == "CHO":
            c = self.chain(at, [("C", 1, "CHO_ald", 1)])
            self.chain(c, [("O", 0, "O_carbonyl", 2)])
        elif name in ("COOEt", "COOMe"):
            c = self.chain(at, [("C", 0, "C_ester", 1)])
            self.chain(c, [("O", 0, "O_carbonyl", 2)])
            if name == "COOEt":
                self.chain(c, [("O", 0, "O_ester", 1), ("C", 2, "CH2_O_ester", 1), ("C", 3, "CH3_alkyl", 1)])
            else:
                self.chain(c, [("O", 0, "O_ester", 1), ("C", 3, "CH3_O_ester", 1)])
        elif name == "Me":
            self.chain(at, [("C", 3, "CH3_aryl", 1)])
        elif name == "Et":
            self.chain(at, [("C", 2, "CH2_benzylic", 1), ("C", 3, "CH3_alkyl", 1)])
        elif name == "Ac":
            c = self.chain(at, [("C", 0, "C_ketone", 1)])
            self.chain(c, [("O", 0, "O_carbonyl", 2)])
            self.chain(c, [("C", 3, "CH3_acetyl", 1)])
        elif name == "OH":
            self.chain(at, [("O", 1, "OH_phenol", 1)])
        elif name == "NH2":
            self.chain(at, [("N", 2, "NH2_aryl", 1)])
        else:
            raise ValueError(f"unknown substituent {name!r}")

    def graph(self):
        return MoleculeGraph(self.atoms, self.bonds)


def para_benzene(x: str, y: str) -> MoleculeGraph:
    b = _Builder()
    ring = [b.add("C", 0, _RING_CLASS[x]), b.add("C", 1, "ArCH"), b.add("C", 1, "ArCH"),
            b.add("C", 0, _RING_CLASS[y]), b.add("C", 1, "ArCH"), b.add("C", 1, "ArCH")]
    for k in range(6):
        b.bond(ring[k], ring[(k + 1) % 6], "aromatic")
    b.substituent(ring[0], x)
    b.substituent(ring[3], y)
    return b.graph()


def pyrrole_24(x: str, y: str) -> MoleculeGraph:
    """2-X-4-Y-1H-pyrrole."""
    b = _Builder()
    n1 = b.add("N", 1, "NH_pyrrole")
    c2 = b.add("C", 0, _RING_CLASS[x])
    c3 = b.add("C", 1, "PyrCH_3")
    c4 = b.add("C", 0, _RING_CLASS[y])
    c5 = b.add("C", 1, "PyrCH_5")
    for a, c in ((n1, c2), (c2, c3), (c3, c4), (c4, c5), (c5, n1)):
        b.bond(a, c, "aromatic")
    b.substituent(c2, x)
    b.substituent(c4, y)
    return b.graph()


def case_study_molecule() -> MoleculeGraph:
    """Ethyl 4-formyl-1H-pyrrole-2-carboxylate."""
    return pyrrole_24("COOEt", "CHO")


def _signature(c: CandidateStructure):
    return tuple((round(s.shift_ppm, 3), s.multiplicity, s.weight) for s in simulate_spectrum(c, "H1").signals)


def library(tables=None) -> list[CandidateStructure]:
    """All scaffold/substituent combinations with distinct simulated H1 spectra, in id order.

    Para-benzenes take unordered substituent pairs; 2,4-pyrroles take ordered
    pairs.  Combinations whose H1 simulation duplicates an earlier one, or
    that contain an unresolvable multiplet, are left out.
    """
    tables = tables or load_shift_tables()
    out, seen = [], set()
    combos = [("bz", x, y, para_benzene) for x, y in itertools.combinations_with_replacement(SUBSTITUENTS, 2)]
    combos += [("py", x, y, pyrrole_24) for x, y in itertools.product(SUBSTITUENTS, repeat=2)]
    for scaf, x, y, fn in combos:
        c = build_candidate(f"{scaf}-{x}-{y}", fn(x, y), tables, "input")
        sig = _signature(c)
        if sig in seen or any(s.multiplicity == "m" for s in simulate_spectrum(c, "H1").signals):
            continue
        # neighbouring H1 signals closer than the multiplet gap would merge into one cluster
        shifts = sorted(s.shift_ppm for s in simulate_spectrum(c, "H1").signals)
        if any(b - a < 0.08 for a, b in zip(shifts, shifts[1:])):
            continue
        seen.add(sig)
        out.append(c)
    out.sort(key=lambda c: c.id)
    return out


class RandomGenerator:
    """Seeded candidate source: random scaffold and substituents from the same grammar."""

    def __init__(self, seed: int = 0, tables=None):
        self.rng = np.random.default_rng(seed)
        self.tables = tables or load_shift_tables()

    def draw(self, n: int) -> list[CandidateStructure]:
        out = []
        for _ in range(n):
            x, y = (SUBSTITUENTS[int(i)] for i in self.rng.integers(0, len(SUBSTITUENTS), 2))
            if self.rng.random() < 0.5:
                x, y = sorted((x, y), key=SUBSTITUENTS.index)
                cid, g = f"bz-{x}-{y}", para_benzene(x, y)
            else:
                cid, g = f"py-{x}-{y}", pyrrole_24(x, y)
            out.append(build_candidate(cid, g, self.tables, "generated"))
        return out


# --- FIDs ---------------------------------------------------------------------

def signal_lines(signals: SignalSet) -> list[tuple[float, float]]:
    """First-order line list (shift ppm offsets are in Hz later): (center ppm, J-offset Hz, weight)."""
    out = []
    for s in signals.signals:
        if s.multiplicity in ("s", "m") or not s.j_hz:
            out.append((s.shift_ppm, 0.0, s.weight))
            continue
        lines = _pattern_lines(s.multiplicity, np.array(s.j_hz, dtype=float), 0.0)
        total = sum(w for _, w, _ in lines)
        out.extend((s.shift_ppm, off, s.weight * w / total) for off, w, _ in lines)
    return out


def synthesize_fid(signals: SignalSet, params: AcquisitionParams, linewidth_hz: float = 1.0,
                   noise: float = 0.0, rng=None, phi0: float = 0.0) -> Fid:
    """Sum of decaying complex exponentials, one per first-order line, plus complex white noise.

    Line areas are proportional to their weights; the first sample is halved
    so the discrete transform carries no constant offset.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    n = params.num_points
    t = np.arange(n) / params.sweep_width
    sf = params.spectrometer_frequency
    fid = np.zeros(n, dtype=complex)
    decay = np.exp(-math.pi * linewidth_hz * t)
    for shift, off, w in signal_lines(signals):
        f = (shift - params.reference_offset_ppm) * sf + off
        fid += w * np.exp(2j * math.pi * f * t)
    fid *= decay * np.exp(1j * phi0)
    fid[0] *= 0.5
    if noise > 0:
        fid += noise * (rng.normal(size=n) + 1j * rng.normal(size=n))
    return Fid.from_complex(fid, params, ("synthesized",))


def lorentzian_spectrum_fid(rng, n_points: int = 8192, n_peaks: int = 8,
                            fwhm_bins=(8.0, 24.0), sweep_width: float = 1.0):
    """Random absorptive test spectrum as an FID: peaks on jittered slots across the window.

    Widths are given in bins of the twice zero-filled spectrum.  Returns the complex FID.
    """
    t = np.arange(n_points)
    fid = np.zeros(n_points, dtype=complex)
    slots = np.linspace(-0.4, 0.4, n_peaks) + rng.uniform(-0.02, 0.02, n_peaks)
    nfill = 2 * n_points
    for f in slots:
        fw = rng.uniform(*fwhm_bins) / nfill
        fid += rng.uniform(0.1, 1.0) * np.exp(2j * math.pi * f * t - math.pi * fw * t)
    fid[0] *= 0.5
    return fid


# acquisition presets used by the demos and planted-solution runs
H1_PARAMS = AcquisitionParams(400.0, 6000.0, 16384, "H1", "DMSO-d6", 6.0)
C13_PARAMS = AcquisitionParams(100.6, 25000.0, 16384, "C13", "DMSO-d6", 110.0)
LINEWIDTH_HZ = {"H1": 1.0, "C13": 3.0}


def planted_fids(candidate: CandidateStructure, seed: int = 0, noise: float = 0.01,
                 phi0: float | None = None) -> dict:
    """Noisy H1 and C13 FIDs simulated from ``candidate``, with a random zero-order phase error."""
    rng = np.random.default_rng(seed)
    out = {}
    for params in (H1_PARAMS, C13_PARAMS):
        nuc = params.nucleus
        p0 = rng.uniform(-math.pi, math.pi) if phi0 is None else phi0
        out[nuc] = synthesize_fid(simulate_spectrum(candidate, nuc), params, LINEWIDTH_HZ[nuc],
                                  noise=noise, rng=rng, phi0=p0)
    return out
