"""DBPW waveform files and filter-bank documents."""
import json
import struct

import numpy as np
import pytest

from tddbp.channel import FiberParams
from tddbp.dbp import init_model
from tddbp.io import (file_digest, load_filter_bank, read_waveform, save_filter_bank, waveform_bytes,
                      write_waveform)
from tddbp.signals import DualPolWaveform

from conftest import crandn


def test_waveform_roundtrip(tmp_path, rng):
    w = DualPolWaveform.from_array(crandn(rng, 2, 100), 128e9)
    write_waveform(tmp_path / "w.dbpw", w)
    r = read_waveform(tmp_path / "w.dbpw")
    assert np.array_equal(r.stack(), w.stack()) and r.sample_rate == 128e9


def test_waveform_layout(rng):
    w = DualPolWaveform.from_array(crandn(rng, 2, 3), 64e9)
    blob = waveform_bytes(w)
    magic, version, rate, n_pol, n = struct.unpack_from("<4sIdIQ", blob)
    assert (magic, version, rate, n_pol, n) == (b"DBPW", 1, 64e9, 2, 3)
    assert len(blob) == struct.calcsize("<4sIdIQ") + 2 * 3 * 16
    first = struct.unpack_from("<dd", blob, struct.calcsize("<4sIdIQ"))
    assert first == (w.samples_x[0].real, w.samples_x[0].imag)


@pytest.mark.parametrize("mutate, msg", [
    (lambda b: b"XXXX" + b[4:], "not a DBPW"),
    (lambda b: b[:4] + struct.pack("<I", 7) + b[8:], "version"),
    (lambda b: b[:-1], "size"),
    (lambda b: b[:10], "truncated"),
])
def test_waveform_rejects_corruption(tmp_path, rng, mutate, msg):
    blob = waveform_bytes(DualPolWaveform.from_array(crandn(rng, 2, 8), 1e9))
    (tmp_path / "bad").write_bytes(mutate(blob))
    with pytest.raises(ValueError, match=msg):
        read_waveform(tmp_path / "bad")


def test_digest_changes_with_content(tmp_path):
    (tmp_path / "a").write_bytes(b"1")
    (tmp_path / "b").write_bytes(b"2")
    assert file_digest(tmp_path / "a") != file_digest(tmp_path / "b")
    assert len(file_digest(tmp_path / "a")) == 64


@pytest.mark.parametrize("residual", [False, True])
def test_filter_bank_roundtrip(tmp_path, residual):
    model = init_model(FiberParams(span_count=3), 128e9, steps_per_span=4, total_taps=40,
                       gamma_dbp=0.7, mimo_taps=5, residual=residual)
    save_filter_bank(tmp_path / "f.json", model, {"seed": 1})
    back, prov = load_filter_bank(tmp_path / "f.json")
    assert prov == {"seed": 1}
    assert back.residual == residual and back.gamma_dbp == 0.7
    assert back.plan == model.plan and back.fiber == model.fiber
    for a, b in zip(back.parameters().values(), model.parameters().values()):
        assert np.array_equal(a, b)
    doc = json.loads((tmp_path / "f.json").read_text())
    assert doc["plan"]["total_taps"] == 40 and doc["filters"][0][0] == [float(model.filters[0][0].real),
                                                                        float(model.filters[0][0].imag)]


def test_filter_bank_rejects_foreign_documents(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_filter_bank(tmp_path / "x.json")
