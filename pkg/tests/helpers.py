"""Shared fixture builders for the test suite."""

import math

import numpy as np

from nmrx.fid import AcquisitionParams, Fid
from nmrx.synth import lorentzian_spectrum_fid
from nmrx.transform import Spectrum, fourier_transform, ppm_axis, zero_fill


def spectrum_from_real(y, sf=400.0, sw=None, ref=5.0, log=("phase:0,0", "baseline:polynomial2"), imag=None):
    y = np.asarray(y, dtype=float)
    n = len(y)
    sw = sw if sw is not None else float(n) / 8
    params = AcquisitionParams(sf, sw, n, "H1", "CDCl3", ref)
    return Spectrum(y, np.zeros(n) if imag is None else imag, ppm_axis(params, n), params, tuple(log))


def lorentzian(x, x0, amp, fwhm):
    g = fwhm / 2
    return amp * g * g / ((x - x0) ** 2 + g * g)


def acme_case(seed):
    """Noise-free absorptive test spectrum (8192-point FID zero-filled to 16384)."""
    rng = np.random.default_rng(seed)
    fid = lorentzian_spectrum_fid(rng)
    params = AcquisitionParams(400.0, 1.0, len(fid), "H1", "", 0.0)
    return fourier_transform(zero_fill(Fid.from_complex(fid, params))), rng


def wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def molecule_spectrum(candidate, small=False):
    """Noise-free, already phased H1 spectrum of a library molecule.

    Full size is a 16384-point FID at 400 MHz with 1 Hz lines; ``small`` is a
    512-point, 100 MHz, 4 Hz version cheap enough for exhaustive grids.
    """
    from nmrx.molecule import simulate_spectrum
    from nmrx.synth import H1_PARAMS, synthesize_fid

    params, lw = (AcquisitionParams(100.0, 1500.0, 512, "H1", "DMSO-d6", 6.0), 4.0) if small else (H1_PARAMS, 1.0)
    return fourier_transform(zero_fill(synthesize_fid(simulate_spectrum(candidate, "H1"), params, lw)))


def observed(candidate, nucleus="H1", perturb=None):
    """Annotated spectrum whose multiplets equal the candidate's simulated signals.

    ``perturb`` maps a signal index to a shift offset in ppm.
    """
    from nmrx.molecule import simulate_spectrum
    from nmrx.peaks import AnnotatedSpectrum, Multiplet
    from nmrx.synth import C13_PARAMS, H1_PARAMS

    out = []
    for k, s in enumerate(simulate_spectrum(candidate, nucleus).signals):
        shift = s.shift_ppm + (perturb or {}).get(k, 0.0)
        out.append(Multiplet(shift, s.multiplicity, s.j_hz, int(s.weight)))
    return AnnotatedSpectrum(tuple(out), H1_PARAMS if nucleus == "H1" else C13_PARAMS)


def sample_db(lib, n=100, seed=7):
    from nmrx.match import CandidateDatabase

    idx = np.random.default_rng(seed).choice(len(lib), size=min(n, len(lib)), replace=False)
    return CandidateDatabase.build([lib[int(i)] for i in sorted(idx)])
