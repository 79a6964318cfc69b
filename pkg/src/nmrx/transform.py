"""Apodization, zero filling and the Fourier transform between Fid and Spectrum."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import schema
from .errors import InvariantViolation, MalformedDocument, NotPowerOfTwo
from .fid import AcquisitionParams, Fid


@dataclass(frozen=True)
class WindowFunction:
    """Apodization window.

    ``kind`` is one of ``"none"``, ``"exponential"`` (``param`` = lb in Hz),
    ``"gaussian"`` (``param`` = gb in Hz) or ``"sinebell"`` (``param`` =
    offset in radians, 0 to pi/2).
    """

    kind: str = "none"
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "exponential", "gaussian", "sinebell"):
            raise InvariantViolation(f"unknown window {self.kind!r}")
        if not math.isfinite(self.param):
            raise InvariantViolation("window parameter must be finite")
        if self.kind in ("exponential", "gaussian") and self.param < 0:
            raise InvariantViolation(f"{self.kind} broadening must be >= 0")
        if self.kind == "sinebell" and not (0 <= self.param <= math.pi / 2):
            raise InvariantViolation("sine-bell offset must lie in [0, pi/2]")

    @classmethod
    def exponential(cls, lb):
        return cls("exponential", float(lb))

    @classmethod
    def gaussian(cls, gb):
        return cls("gaussian", float(gb))

    @classmethod
    def sinebell(cls, offset=math.pi / 2):
        return cls("sinebell", float(offset))

    @classmethod
    def parse(cls, text: str) -> "WindowFunction":
        """Parse ``exp:0.3``, ``gauss:1.0``, ``sine:1.57`` or ``none``."""
        name, _, arg = text.partition(":")
        kind = {"exp": "exponential", "exponential": "exponential", "gauss": "gaussian",
                "gaussian": "gaussian", "sine": "sinebell", "sinebell": "sinebell",
                "none": "none"}.get(name.strip().lower())
        if kind is None:
            raise InvariantViolation(f"unknown window {text!r}")
        try:
            param = float(arg) if arg else (math.pi / 2 if kind == "sinebell" else 0.0)
        except ValueError:
            raise InvariantViolation(f"bad window parameter in {text!r}") from None
        return cls(kind, param)

    def label(self) -> str:
        return "none" if self.kind == "none" else f"{self.kind}:{self.param:g}"

    def weights(self, n: int, sweep_width: float) -> np.ndarray:
        k = np.arange(n)
        t = k / sweep_width
        if self.kind == "exponential":
            return np.exp(-math.pi * self.param * t)
        if self.kind == "gaussian":
            return np.exp(-((math.pi * self.param * t) ** 2) / (4 * math.log(2)))
        if self.kind == "sinebell":
            off = self.param
            return np.sin(off + (math.pi - off) * k / max(n - 1, 1))
        return np.ones(n)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Complex frequency-domain data on a strictly decreasing ppm axis."""

    real: np.ndarray
    imag: np.ndarray
    ppm_axis: np.ndarray
    params: AcquisitionParams
    processing_log: tuple = field(default_factory=tuple)

    def __post_init__(self):
        r = np.asarray(self.real, dtype=float)
        i = np.asarray(self.imag, dtype=float)
        ax = np.asarray(self.ppm_axis, dtype=float)
        if not (len(r) == len(i) == len(ax)):
            raise InvariantViolation("real, imag and ppm_axis must share one length")
        if len(ax) > 1 and not np.all(np.diff(ax) < 0):
            raise InvariantViolation("ppm_axis must be strictly decreasing")
        object.__setattr__(self, "real", r)
        object.__setattr__(self, "imag", i)
        object.__setattr__(self, "ppm_axis", ax)
        object.__setattr__(self, "processing_log", tuple(self.processing_log))

    @property
    def data(self) -> np.ndarray:
        return self.real + 1j * self.imag

    def __len__(self):
        return len(self.real)

    @property
    def hz_per_point(self) -> float:
        return self.params.sweep_width / len(self.real)

    def with_data(self, data, step: str | None = None) -> "Spectrum":
        data = np.asarray(data, dtype=complex)
        log = self.processing_log + ((step,) if step else ())
        return Spectrum(data.real.copy(), data.imag.copy(), self.ppm_axis, self.params, log)

    def has_step(self, prefix: str) -> bool:
        return any(s.startswith(prefix) for s in self.processing_log)

    def to_dict(self) -> dict:
        return {
            "schema": schema.tag("spectrum"),
            "params": self.params.to_dict(),
            "real": self.real.tolist(),
            "imag": self.imag.tolist(),
            "ppm_axis": self.ppm_axis.tolist(),
            "processing_log": list(self.processing_log),
        }

    @classmethod
    def from_dict(cls, doc) -> "Spectrum":
        if not isinstance(doc, dict):
            raise MalformedDocument("spectrum document must be an object")
        schema.check(doc, "spectrum")
        try:
            params = AcquisitionParams.from_dict(doc["params"])
            return cls(np.asarray(doc["real"], float), np.asarray(doc["imag"], float),
                       np.asarray(doc["ppm_axis"], float), params,
                       tuple(doc.get("processing_log", [])))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDocument(f"bad spectrum document: {exc}") from None


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def apodize(fid: Fid, window: WindowFunction) -> Fid:
    """Multiply sample k by the window evaluated at t_k = k / sweep_width."""
    if window.kind == "none" or (window.kind in ("exponential", "gaussian") and window.param == 0):
        return replace(fid, processing_log=fid.processing_log + (f"apodize:{window.label()}",))
    w = window.weights(fid.params.num_points, fid.params.sweep_width)
    return Fid(fid.real * w, fid.imag * w, fid.params,
               fid.processing_log + (f"apodize:{window.label()}",))


def zero_fill(fid: Fid) -> Fid:
    """Pad with exact zeros to the smallest power of two >= 2 * num_points."""
    n = fid.params.num_points
    target = 1 << (2 * n - 1).bit_length()
    pad = target - n
    real = np.concatenate([fid.real, np.zeros(pad)])
    imag = np.concatenate([fid.imag, np.zeros(pad)])
    params = replace(fid.params, num_points=target)
    return Fid(real, imag, params, fid.processing_log + (f"zero_fill:{target}",))


def frequency_axis_hz(n: int, sweep_width: float) -> np.ndarray:
    """Bin frequencies in Hz, running from +sw/2 down to just above -sw/2."""
    return sweep_width / 2 - np.arange(n) * (sweep_width / n)


def ppm_axis(params: AcquisitionParams, n: int | None = None) -> np.ndarray:
    n = params.num_points if n is None else n
    return frequency_axis_hz(n, params.sweep_width) / params.spectrometer_frequency + params.reference_offset_ppm


def fourier_transform(fid: Fid) -> Spectrum:
    """DFT with kernel e^{-i w t}; bins reordered so frequency decreases left to right.

    Raises
    ------
    NotPowerOfTwo
        Call :func:`zero_fill` first.
    """
    n = fid.params.num_points
    if not _is_pow2(n):
        raise NotPowerOfTwo(f"{n} points; zero_fill before transforming")
    spec = np.fft.fftshift(np.fft.fft(fid.data))[::-1]
    # reversal maps fftshift bin (n/2 - j) to position j, i.e. +sw/2 at index 0
    spec = np.roll(spec, 1)
    return Spectrum(spec.real.copy(), spec.imag.copy(), ppm_axis(fid.params), fid.params,
                    fid.processing_log + ("fourier_transform",))


def inverse_transform(spectrum: Spectrum) -> Fid:
    """Exact inverse of :func:`fourier_transform`."""
    n = len(spectrum)
    if not _is_pow2(n):
        raise NotPowerOfTwo(f"{n} points")
    spec = np.roll(spectrum.data, -1)[::-1]
    data = np.fft.ifft(np.fft.ifftshift(spec))
    params = replace(spectrum.params, num_points=n)
    return Fid(data.real.copy(), data.imag.copy(), params,
               spectrum.processing_log + ("inverse_transform",))
