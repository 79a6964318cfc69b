import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmrx.errors import InvariantViolation, MalformedDocument, NmrxError, UnsupportedFeature
from nmrx.fid import AcquisitionParams, Fid, dump_fid_json, parse_fid_json, parse_jcamp_subset, write_jcamp


def doc(real, imag, **params):
    p = {"spectrometer_frequency_mhz": 400.0, "sweep_width_hz": 4000.0, "num_points": len(real),
         "nucleus": "H1", "solvent": "CDCl3", "reference_offset_ppm": 0.0}
    p.update(params)
    return json.dumps({"params": p, "real": real, "imag": imag}).encode()


def test_minimal_json_document():
    fid = parse_fid_json(doc([1, 0, 0, 0], [0, 0, 0, 0]))
    assert fid.params.num_points == 4
    assert fid.params.spectrometer_frequency == 400.0
    assert fid.real.tolist() == [1, 0, 0, 0]


def test_length_mismatch_is_invariant_violation():
    with pytest.raises(InvariantViolation):
        parse_fid_json(doc([1, 0, 0, 0], [0, 0, 0], num_points=4))


@pytest.mark.parametrize("blob", [b"", b"not json", b"\xff\xfe", b"[]", b'{"real": []}', b"{\"params\": 3}"])
def test_malformed_json(blob):
    with pytest.raises(MalformedDocument):
        parse_fid_json(blob)


@pytest.mark.parametrize("field,value", [("spectrometer_frequency_mhz", 0), ("sweep_width_hz", -1.0),
                                         ("nucleus", "F19"), ("num_points", 1)])
def test_bad_params(field, value):
    real = [0.0] if field == "num_points" else [0.0, 0.0]
    with pytest.raises(InvariantViolation):
        parse_fid_json(doc(real, list(real), **{field: value}))


def test_non_finite_sample():
    blob = doc([0.0, 0.0], [0.0, 0.0]).replace(b'"real": [0.0', b'"real": [1e400')
    with pytest.raises(InvariantViolation):
        parse_fid_json(blob)


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@st.composite
def fids(draw):
    n = draw(st.integers(2, 40))
    real = draw(st.lists(finite, min_size=n, max_size=n))
    imag = draw(st.lists(finite, min_size=n, max_size=n))
    params = AcquisitionParams(draw(st.floats(1.0, 1000.0)), draw(st.floats(1.0, 1e5)), n,
                               draw(st.sampled_from(["H1", "C13"])), draw(st.sampled_from(["", "CDCl3", "DMSO-d6"])),
                               draw(st.floats(-50, 250)))
    return Fid(np.array(real), np.array(imag), params)


@settings(max_examples=50, deadline=None)
@given(fids())
def test_json_round_trip_is_bit_exact(fid):
    again = parse_fid_json(dump_fid_json(fid))
    assert again == fid
    assert parse_fid_json(dump_fid_json(again)) == again


@settings(max_examples=50, deadline=None)
@given(fids())
def test_jcamp_round_trip(fid):
    again = parse_jcamp_subset(write_jcamp(fid))
    assert again.params == fid.params
    np.testing.assert_allclose(again.real, fid.real, rtol=1e-12, atol=0)
    np.testing.assert_allclose(again.imag, fid.imag, rtol=1e-12, atol=0)


MINIMAL = """##TITLE=minimal
##JCAMP-DX=5.01
##.OBSERVE FREQUENCY=400
##$SW_h=4000
##NPOINTS=4
##DATA TABLE=(X++(R..R)), XYDATA
0 1 0 0 0
##DATA TABLE=(X++(I..I)), XYDATA
0 0 0 0 0
##END=
"""


def test_minimal_jcamp():
    fid = parse_jcamp_subset(MINIMAL)
    assert fid.params.num_points == 4 and fid.params.spectrometer_frequency == 400
    assert fid.real.tolist() == [1, 0, 0, 0]


def test_jcamp_yfactor_scales_values():
    fid = parse_jcamp_subset(MINIMAL.replace("##NPOINTS=4", "##NPOINTS=4\n##YFACTOR=0.5"))
    assert fid.real.tolist() == [0.5, 0, 0, 0]


def test_jcamp_dif_is_rejected():
    text = MINIMAL.replace("0 1 0 0 0", "0A1J0%%")
    with pytest.raises(UnsupportedFeature):
        parse_jcamp_subset(text)


def test_jcamp_xydata_table_rejected():
    with pytest.raises(UnsupportedFeature):
        parse_jcamp_subset("##TITLE=x\n##XYDATA=(X++(Y..Y))\n1 2 3\n##END=\n")


@pytest.mark.parametrize("drop", ["##TITLE=minimal\n", "##.OBSERVE FREQUENCY=400\n", "##$SW_h=4000\n"])
def test_jcamp_missing_mandatory_label(drop):
    with pytest.raises(MalformedDocument):
        parse_jcamp_subset(MINIMAL.replace(drop, ""))


def test_jcamp_non_numeric_token():
    with pytest.raises(MalformedDocument):
        parse_jcamp_subset(MINIMAL.replace("0 1 0 0 0", "0 1 x? 0 0"))


def test_jcamp_point_count_mismatch():
    with pytest.raises(InvariantViolation):
        parse_jcamp_subset(MINIMAL.replace("##NPOINTS=4", "##NPOINTS=5"))


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=300))
def test_parsers_raise_only_typed_errors(blob):
    for parser in (parse_fid_json, parse_jcamp_subset):
        try:
            parser(blob)
        except NmrxError:
            pass


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="#$.=ABCDEHIJNOPRSTUVWXY()+_ 0123456789.-,\n", max_size=400))
def test_jcamp_grammar_fuzz(text):
    try:
        fid = parse_jcamp_subset(MINIMAL[:60] + text)
    except NmrxError:
        return
    assert len(fid.real) == fid.params.num_points
    assert all(math.isfinite(v) for v in fid.real)
