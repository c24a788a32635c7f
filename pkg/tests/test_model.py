import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eventsched.model import LtiSystem, SystemSet, spectral_radius, symmetrize, validate_system


def test_spectral_radius_examples():
    assert spectral_radius([[2, 1], [0, 1]]) == pytest.approx(2.0, rel=1e-10)
    assert spectral_radius(np.eye(3)) == pytest.approx(1.0, rel=1e-10)
    assert spectral_radius([[1.1, 1], [0, 1]]) == pytest.approx(1.1, rel=1e-10)


def test_spectral_radius_rejects_non_square():
    with pytest.raises(ValueError):
        spectral_radius(np.ones((2, 3)))


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (3, 3), elements=st.floats(-5, 5)),
    st.floats(-4, 4, allow_nan=False),
)
def test_spectral_radius_scales(A, c):
    # symmetrized: eigenvalues of near-defective matrices move by eps**(1/d) under rounding
    A = A + A.T
    assert spectral_radius(c * A) == pytest.approx(abs(c) * spectral_radius(A), rel=1e-9, abs=1e-9)


def test_example_systems_validate(example_systems):
    for s in example_systems:
        rep = validate_system(s)
        assert rep.ok, rep.errors
        assert not rep.warnings  # both are unstable


def test_zero_q_is_an_error():
    rep = validate_system(LtiSystem(A=[[2.0]], C=[[1.0]], Q=[[0.0]], R=[[1.0]]))
    assert "Q not PD" in rep.errors


def test_undetectable_system_reported():
    rep = validate_system(LtiSystem(A=[[2.0, 0], [0, 1.0]], C=[[0.0, 0.0]], Q=np.eye(2), R=[[1.0]]))
    assert not rep.ok
    assert any("not detectable" in e for e in rep.errors)


def test_stable_system_only_warns():
    rep = validate_system(LtiSystem(A=[[0.5]], C=[[1.0]], Q=[[1.0]], R=[[1.0]]))
    assert rep.ok and rep.warnings


@pytest.mark.parametrize(
    "kw",
    [
        dict(A=np.ones((2, 3)), C=[[1, 0]], Q=np.eye(2), R=[[1]]),
        dict(A=np.eye(2), C=[[1, 0, 0]], Q=np.eye(2), R=[[1]]),
        dict(A=np.eye(2), C=[[1, 0]], Q=np.eye(3), R=[[1]]),
        dict(A=np.eye(2), C=[[1, 0]], Q=np.eye(2), R=np.eye(2)),
    ],
)
def test_dimension_mismatch(kw):
    with pytest.raises(ValueError):
        LtiSystem(**kw)


def test_symmetrize_rejects_asymmetric():
    with pytest.raises(ValueError):
        symmetrize(np.array([[1.0, 0.5], [0.0, 1.0]]))
    X = symmetrize(np.array([[1.0, 0.5], [0.5 + 1e-12, 1.0]]))
    assert np.array_equal(X, X.T)


def test_defaults_and_immutability():
    s = LtiSystem(A=[[2.0]], C=[[1.0]], Q=[[3.0]], R=[[1.0]])
    assert s.Pi0[0, 0] == 3.0
    with pytest.raises(ValueError):
        s.A[0, 0] = 1.0


def test_system_set():
    with pytest.raises(ValueError):
        SystemSet([])
    ss = SystemSet([LtiSystem(A=[[2.0]], C=[[1.0]], Q=[[1.0]], R=[[1.0]])])
    assert ss.n == len(ss) == 1
