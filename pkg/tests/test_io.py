import numpy as np
import pytest

from phaseplug import io
from phaseplug.helmholtz import FrequencyResponse


def _resp():
    f = np.array([1000.0, 2000.0, 4000.0])
    p = np.array([0.1 + 0.2j, 1 / 3 - 1e-17j, np.pi * 1j])
    return FrequencyResponse(f, 2 * np.pi * f / 343.2, p, p * 0.9)


def test_response_round_trip_bit_exact(tmp_path):
    r = _resp()
    path = io.write_response(tmp_path / "r.csv", r)
    header, data = io.read_csv(path)
    assert ",".join(header) == io.RESPONSE_HEADER
    assert np.array_equal(data[:, 2] + 1j * data[:, 3], r.p_out)
    assert np.array_equal(data[:, 0], r.f)


def test_fmt():
    assert io.fmt(3) == "3"
    assert float(io.fmt(0.1)) == 0.1


def test_design_reordering_and_errors(tmp_path):
    ids = np.array([4, 7, 9])
    path = io.write_design(tmp_path / "d.csv", ids[::-1], np.array([3.0, 2.0, 1.0]))
    np.testing.assert_array_equal(io.read_design(path, ids), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        io.read_design(path, np.array([4, 7, 10]))
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        io.read_design(bad, ids)


def test_svg_written(tmp_path):
    path = io.response_svg(tmp_path / "r.svg", _resp(), "t")
    text = path.read_text()
    assert text.startswith("<svg") and text.count("<polyline") == 2


def test_history_header(tmp_path):
    from phaseplug.optimizer import IterationRecord
    path = io.write_history(tmp_path / "h.csv", [IterationRecord(0, 1.0, 2.0, 0.0)])
    assert path.read_text().splitlines() == [io.HISTORY_HEADER, "0,1,2,0"]
