"""FID containers and readers.

Two input formats are understood: the canonical JSON container (explicit
``real``/``imag`` arrays) and an AFFN-only subset of JCAMP-DX.  Compressed
JCAMP encodings (SQZ/DIF/DUP) are rejected rather than guessed at.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import schema
from .errors import InvariantViolation, MalformedDocument, UnsupportedFeature

NUCLEI = ("H1", "C13")


@dataclass(frozen=True)
class AcquisitionParams:
    """Acquisition metadata.

    ``reference_offset_ppm`` is the chemical shift of the carrier, i.e. of the
    centre of the transformed spectrum.  The default of 0 centres the sweep
    on 0 ppm.
    """

    spectrometer_frequency: float  # MHz
    sweep_width: float  # Hz
    num_points: int
    nucleus: str = "H1"
    solvent: str = ""
    reference_offset_ppm: float = 0.0

    def __post_init__(self):
        for name in ("spectrometer_frequency", "sweep_width", "reference_offset_ppm"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise InvariantViolation(f"{name} must be a finite number, got {v!r}")
        if self.spectrometer_frequency <= 0:
            raise InvariantViolation("spectrometer_frequency must be positive")
        if self.sweep_width <= 0:
            raise InvariantViolation("sweep_width must be positive")
        if isinstance(self.num_points, bool) or not isinstance(self.num_points, int):
            raise InvariantViolation("num_points must be an integer")
        if self.num_points < 2:
            raise InvariantViolation("num_points must be at least 2")
        if self.nucleus not in NUCLEI:
            raise InvariantViolation(f"nucleus must be one of {NUCLEI}, got {self.nucleus!r}")
        if not isinstance(self.solvent, str):
            raise InvariantViolation("solvent must be text")
        if not (self.sweep_width / self.num_points > 0):
            raise InvariantViolation("digital resolution must be positive")

    @property
    def digital_resolution(self) -> float:
        return self.sweep_width / self.num_points

    def to_dict(self) -> dict:
        return {
            "spectrometer_frequency_mhz": self.spectrometer_frequency,
            "sweep_width_hz": self.sweep_width,
            "num_points": self.num_points,
            "nucleus": self.nucleus,
            "solvent": self.solvent,
            "reference_offset_ppm": self.reference_offset_ppm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AcquisitionParams":
        if not isinstance(d, dict):
            raise MalformedDocument("params must be an object")
        try:
            sf = d["spectrometer_frequency_mhz"]
            sw = d["sweep_width_hz"]
            n = d["num_points"]
        except KeyError as exc:
            raise MalformedDocument(f"params missing field {exc.args[0]!r}") from None
        if isinstance(n, float) and n.is_integer():
            n = int(n)
        return cls(
            spectrometer_frequency=sf,
            sweep_width=sw,
            num_points=n,
            nucleus=d.get("nucleus", "H1"),
            solvent=d.get("solvent", ""),
            reference_offset_ppm=d.get("reference_offset_ppm", 0.0),
        )


@dataclass(frozen=True, eq=False)
class Fid:
    """Complex time-domain samples with their acquisition parameters."""

    real: np.ndarray
    imag: np.ndarray
    params: AcquisitionParams
    processing_log: tuple = field(default_factory=tuple)

    def __post_init__(self):
        re_ = np.asarray(self.real, dtype=float)
        im = np.asarray(self.imag, dtype=float)
        if re_.ndim != 1 or im.ndim != 1:
            raise InvariantViolation("sample arrays must be one-dimensional")
        if len(re_) != len(im):
            raise InvariantViolation(f"real/imag length mismatch: {len(re_)} vs {len(im)}")
        if len(re_) != self.params.num_points:
            raise InvariantViolation(
                f"num_points={self.params.num_points} but {len(re_)} samples present"
            )
        if not (np.all(np.isfinite(re_)) and np.all(np.isfinite(im))):
            raise InvariantViolation("non-finite sample value")
        object.__setattr__(self, "real", re_)
        object.__setattr__(self, "imag", im)
        object.__setattr__(self, "processing_log", tuple(self.processing_log))

    @classmethod
    def from_complex(cls, data, params: AcquisitionParams, processing_log=()) -> "Fid":
        data = np.asarray(data, dtype=complex)
        if params.num_points != len(data):
            params = replace(params, num_points=len(data))
        return cls(data.real.copy(), data.imag.copy(), params, processing_log)

    @property
    def data(self) -> np.ndarray:
        return self.real + 1j * self.imag

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.params.num_points) / self.params.sweep_width

    def __eq__(self, other):
        if not isinstance(other, Fid):
            return NotImplemented
        return (
            self.params == other.params
            and np.array_equal(self.real, other.real)
            and np.array_equal(self.imag, other.imag)
        )

    def to_dict(self) -> dict:
        return {
            "schema": schema.tag("fid"),
            "params": self.params.to_dict(),
            "real": self.real.tolist(),
            "imag": self.imag.tolist(),
            "processing_log": list(self.processing_log),
        }


def _number_list(values, name):
    if not isinstance(values, list):
        raise MalformedDocument(f"{name} must be an array")
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise MalformedDocument(f"{name} contains a non-numeric entry")
    try:
        return np.array(values, dtype=float)
    except OverflowError:
        raise InvariantViolation(f"{name} contains a value outside float range") from None


def fid_from_dict(doc) -> Fid:
    if not isinstance(doc, dict):
        raise MalformedDocument("FID document must be a JSON object")
    schema.check(doc, "fid", required=False)
    for key in ("params", "real", "imag"):
        if key not in doc:
            raise MalformedDocument(f"missing field {key!r}")
    params = AcquisitionParams.from_dict(doc["params"])
    real = _number_list(doc["real"], "real")
    imag = _number_list(doc["imag"], "imag")
    log = doc.get("processing_log", [])
    if not isinstance(log, list) or not all(isinstance(s, str) for s in log):
        raise MalformedDocument("processing_log must be a list of strings")
    return Fid(real, imag, params, tuple(log))


def parse_fid_json(data) -> Fid:
    """Parse the canonical JSON container (bytes or text) into a :class:`Fid`.

    Raises
    ------
    MalformedDocument
        Not UTF-8, not JSON, or a required field is missing or mistyped.
    InvariantViolation
        Length mismatch, non-finite sample or non-positive parameter.
    """
    if isinstance(data, (bytes, bytearray)):
        try:
            data = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"not UTF-8: {exc}") from None
    try:
        doc = json.loads(data)
    except (ValueError, RecursionError) as exc:
        raise MalformedDocument(f"not JSON: {exc}") from None
    return fid_from_dict(doc)


def dump_fid_json(fid: Fid) -> bytes:
    return json.dumps(fid.to_dict()).encode("utf-8")


# --- JCAMP-DX (AFFN subset) -------------------------------------------------

_AFFN = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
# pseudo-digits of the SQZ, DIF and DUP compressions
_COMPRESSED = set("@ABCDEFGHIabcdefghi%JKLMNOPQRjklmnopqrSTUVWXYZs")


def _norm_label(label: str) -> str:
    return re.sub(r"[\s\-/_]", "", label).upper()


def _parse_float(token: str, what: str) -> float:
    token = token.strip()
    if not _AFFN.match(token):
        raise MalformedDocument(f"{what}: non-numeric value {token!r}")
    return float(token)


def parse_jcamp_subset(text) -> Fid:
    """Parse an AFFN-encoded JCAMP-DX NMR FID.

    Supported labels: ``##TITLE``, ``##.OBSERVE FREQUENCY`` (MHz), ``##$SW_h``
    or ``##SWEEPWIDTH`` (Hz), optional ``##NPOINTS``, ``##YFACTOR``,
    ``##.OBSERVE NUCLEUS``, ``##.SOLVENT NAME``, ``##$REFERENCE OFFSET PPM``,
    and two ``##DATA TABLE=`` blocks declared ``(X++(R..R))`` and
    ``(X++(I..I))``.  Each data line is an abscissa followed by ordinates.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"not UTF-8: {exc}") from None
    if not isinstance(text, str):
        raise MalformedDocument("JCAMP input must be text")

    labels: dict[str, str] = {}
    tables: dict[str, list[float]] = {}
    current = None
    for raw in text.splitlines():
        line = raw.split("$$", 1)[0].strip()
        if not line:
            continue
        if line.startswith("##"):
            current = None
            name, sep, value = line[2:].partition("=")
            if not sep:
                raise MalformedDocument(f"label without '=': {line[:40]!r}")
            key = _norm_label(name)
            value = value.strip()
            if key == "END":
                break
            if key == "DATATABLE":
                decl = value.replace(" ", "").upper()
                if "(R..R)" in decl:
                    current = "R"
                elif "(I..I)" in decl:
                    current = "I"
                else:
                    raise UnsupportedFeature(f"data table declaration {value!r}")
                if current in tables:
                    raise MalformedDocument(f"duplicate {current} data table")
                tables[current] = []
                continue
            if key in ("XYDATA", "XYPOINTS", "PEAKTABLE"):
                raise UnsupportedFeature(f"##{name.strip()} tables are outside the supported subset")
            labels[key] = value
            continue
        if current is None:
            continue
        tokens = [t for t in re.split(r"[\s,;]+", line) if t]
        for tok in tokens:
            if not _AFFN.match(tok):
                if any(c in _COMPRESSED for c in tok):
                    raise UnsupportedFeature(
                        "compressed (SQZ/DIF/DUP) JCAMP data is not supported; re-export as AFFN"
                    )
                raise MalformedDocument(f"non-numeric token {tok[:20]!r} in data table")
        # first token of each line is the abscissa check value
        tables[current].extend(float(t) for t in tokens[1:])

    for key, label in (("TITLE", "##TITLE"), (".OBSERVEFREQUENCY", "##.OBSERVE FREQUENCY")):
        if key not in labels:
            raise MalformedDocument(f"missing mandatory label {label}")
    sw_raw = labels.get("$SWH", labels.get("SWEEPWIDTH"))
    if sw_raw is None:
        raise MalformedDocument("missing mandatory label ##$SW_h or ##SWEEPWIDTH")
    if "R" not in tables or "I" not in tables:
        raise MalformedDocument("real and imaginary data tables are both required")

    sf = _parse_float(labels[".OBSERVEFREQUENCY"], "##.OBSERVE FREQUENCY")
    sw = _parse_float(sw_raw, "sweep width")
    yfactor = _parse_float(labels["YFACTOR"], "##YFACTOR") if "YFACTOR" in labels else 1.0
    offset = (
        _parse_float(labels["$REFERENCEOFFSETPPM"], "reference offset")
        if "$REFERENCEOFFSETPPM" in labels
        else 0.0
    )
    real = np.array(tables["R"], dtype=float) * yfactor
    imag = np.array(tables["I"], dtype=float) * yfactor
    if "NPOINTS" in labels:
        npts_f = _parse_float(labels["NPOINTS"], "##NPOINTS")
        if not npts_f.is_integer():
            raise MalformedDocument("##NPOINTS must be an integer")
        npts = int(npts_f)
    else:
        npts = len(real)
    nucleus = labels.get(".OBSERVENUCLEUS", "^1H").replace("^", "").upper()
    nucleus = {"1H": "H1", "H1": "H1", "13C": "C13", "C13": "C13"}.get(nucleus)
    if nucleus is None:
        raise UnsupportedFeature(f"nucleus {labels['.OBSERVENUCLEUS']!r}")
    params = AcquisitionParams(
        spectrometer_frequency=sf,
        sweep_width=sw,
        num_points=npts,
        nucleus=nucleus,
        solvent=labels.get(".SOLVENTNAME", ""),
        reference_offset_ppm=offset,
    )
    return Fid(real, imag, params)


def write_jcamp(fid: Fid, title: str = "nmrx export", per_line: int = 5) -> str:
    """Write ``fid`` as AFFN JCAMP-DX readable by :func:`parse_jcamp_subset`."""
    p = fid.params
    out = [
        f"##TITLE={title}",
        "##JCAMP-DX=5.01",
        "##DATA TYPE=NMR FID",
        f"##.OBSERVE FREQUENCY={p.spectrometer_frequency!r}",
        f"##.OBSERVE NUCLEUS=^{'1H' if p.nucleus == 'H1' else '13C'}",
        f"##.SOLVENT NAME={p.solvent}",
        f"##$SW_h={p.sweep_width!r}",
        f"##$REFERENCE OFFSET PPM={p.reference_offset_ppm!r}",
        f"##NPOINTS={p.num_points}",
        "##YFACTOR=1",
    ]
    for decl, values in (("(X++(R..R)), XYDATA", fid.real), ("(X++(I..I)), XYDATA", fid.imag)):
        out.append(f"##DATA TABLE={decl}")
        for start in range(0, len(values), per_line):
            chunk = " ".join(repr(float(v)) for v in values[start:start + per_line])
            out.append(f"{start} {chunk}")
    out.append("##END=")
    return "\n".join(out) + "\n"
