"""RAdam update rule and state persistence."""
import numpy as np
import pytest

from tddbp.optim import OptimizerState, dump_state, load_state, radam_step, rectification

from conftest import crandn


def test_frozen_trace_scalar():
    # [DERIVED] five unit-gradient steps from p=1 at lr 1e-3, computed with a
    # scalar reference implementation: steps 1-4 fall back to momentum SGD
    # (rho_t <= 4), step 5 is rectified with r_5 ~= 0.0173115.
    state = OptimizerState(lr=1e-3)
    p = {"w": np.array(1.0)}
    for _ in range(5):
        p = radam_step(p, {"w": np.array(1.0)}, state)
    assert float(p["w"]) == pytest.approx(0.9959826884970068, abs=1e-15)


def test_rectification_threshold():
    assert [rectification(t, 0.999) is None for t in range(1, 6)] == [True] * 4 + [False]
    assert rectification(5, 0.999) == pytest.approx(0.0173115, rel=1e-5)
    assert rectification(10**6, 0.999) == pytest.approx(1.0, rel=1e-6)


def test_complex_parts_are_independent(rng):
    z = crandn(rng, 7)
    g = crandn(rng, 7)
    s1, s2, s3 = OptimizerState(), OptimizerState(), OptimizerState()
    out = radam_step({"z": z}, {"z": g}, s1)["z"]
    re = radam_step({"a": z.real}, {"a": g.real}, s2)["a"]
    im = radam_step({"a": z.imag}, {"a": g.imag}, s3)["a"]
    assert np.array_equal(out.real, re) and np.array_equal(out.imag, im)


def test_zero_gradient_leaves_parameters(rng):
    p = {"z": crandn(rng, 5)}
    state = OptimizerState()
    for _ in range(8):
        q = radam_step(p, {"z": np.zeros(5, complex)}, state)
    assert np.array_equal(q["z"], p["z"])


def test_inputs_not_modified(rng):
    z = crandn(rng, 5)
    keep = z.copy()
    radam_step({"z": z}, {"z": crandn(rng, 5)}, OptimizerState())
    assert np.array_equal(z, keep)


def test_blockwise_equals_joint(rng):
    """Per-name updates are independent of which other names share the step."""
    p = {"a": crandn(rng, 4), "b": crandn(rng, 6)}
    joint, sa, sb = OptimizerState(), OptimizerState(), OptimizerState()
    pa, pb = {"a": p["a"]}, {"b": p["b"]}
    for _ in range(7):
        g = {"a": crandn(rng, 4), "b": crandn(rng, 6)}
        p = radam_step(p, g, joint)
        pa = radam_step(pa, {"a": g["a"]}, sa)
        pb = radam_step(pb, {"b": g["b"]}, sb)
    assert np.array_equal(p["a"], pa["a"]) and np.array_equal(p["b"], pb["b"])


def test_non_finite_and_shape_errors():
    with pytest.raises(FloatingPointError):
        radam_step({"w": np.zeros(2)}, {"w": np.array([0.0, np.nan])}, OptimizerState())
    with pytest.raises(ValueError):
        radam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, OptimizerState())


def test_state_roundtrip_resumes_identically(rng):
    p = {"z": crandn(rng, 5), "g": np.array(0.8)}
    state = OptimizerState(lr=3e-4)
    grads = [{"z": crandn(rng, 5), "g": np.array(rng.standard_normal())} for _ in range(9)]
    for g in grads[:4]:
        p = radam_step(p, g, state)
    restored = load_state(dump_state(state))
    assert restored.step == 4 and restored.lr == 3e-4
    a, b = dict(p), dict(p)
    for g in grads[4:]:
        a = radam_step(a, g, state)
        b = radam_step(b, g, restored)
    for k in p:
        assert np.array_equal(a[k], b[k])


def test_load_rejects_garbage():
    with pytest.raises(ValueError):
        load_state(b"XXXX\x01\x00\x00\x00")
    blob = bytearray(dump_state(OptimizerState()))
    blob[4] = 9
    with pytest.raises(ValueError):
        load_state(bytes(blob))
