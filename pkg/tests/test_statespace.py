"""State-space layer: kets, mutually unbiased bases, entropies, thresholds.

Expected numbers here are frozen from independent evaluation (closed
forms where they exist, high-precision scalar evaluation otherwise),
not from running the package and copying its output.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oamqkd import statespace as ss
from oamqkd.exceptions import DomainError, ModeSetError, NormalizationError

INV_SQRT2 = 1 / math.sqrt(2)


# ---------------------------------------------------------------- kets

def test_mode_order_is_canonical():
    assert ss.MODE_ORDER == (-7, -6, 6, 7)


def test_ket_rejects_mode_outside_alphabet():
    with pytest.raises(ModeSetError):
        ss.ket(5)
    with pytest.raises(ModeSetError):
        ss.ket(0)
    with pytest.raises(ModeSetError):
        ss.OamKet({6: INV_SQRT2, 8: INV_SQRT2})


def test_ket_norm_policy():
    # Off by less than 1e-6: renormalized quietly.
    eps = 2e-7
    k = ss.OamKet({-6: INV_SQRT2 * (1 + eps), -7: INV_SQRT2})
    assert abs(sum(abs(a) ** 2 for _, a in k.items()) - 1.0) < 1e-12
    # Off by more than 1e-6: rejected.
    with pytest.raises(NormalizationError):
        ss.OamKet({-6: 1.0, -7: 1.0})
    with pytest.raises(NormalizationError):
        ss.OamKet({6: 0.0})


def test_vector_follows_mode_order():
    k = ss.superposition({7: 1.0, -7: 1.0})
    v = k.vector()
    assert v.shape == (4,)
    # MODE_ORDER is (-7, -6, 6, 7): amplitude on -7 first, 7 last.
    assert v[0] == pytest.approx(INV_SQRT2)
    assert v[1] == 0 and v[2] == 0
    assert v[3] == pytest.approx(INV_SQRT2)


def test_overlap_and_global_phase():
    a = ss.superposition({6: 1.0, -6: 1.0})
    b = ss.superposition({6: 1j, -6: 1j})
    assert abs(a.overlap(a) - 1.0) < 1e-12
    assert a.close_to(b)  # same ray
    c = ss.superposition({6: 1.0, -6: -1.0})
    assert abs(a.overlap(c)) < 1e-12


# ------------------------------------------------- mutually unbiased bases

def test_mub_2d_golden_vectors():
    mub = ss.mub_pair("2D")
    assert mub.dim == 2
    assert mub.z[0].close_to(ss.ket(-6))
    assert mub.z[1].close_to(ss.ket(-7))
    assert mub.x[0].close_to(ss.superposition({-6: 1, -7: 1}))
    assert mub.x[1].close_to(ss.superposition({-6: 1, -7: -1}))


def test_mub_mux_channels_use_disjoint_mode_pairs():
    m6 = ss.mub_pair("MUX6")
    m7 = ss.mub_pair("MUX7")
    modes6 = {m for k in (*m6.z, *m6.x) for m in k.modes}
    modes7 = {m for k in (*m7.z, *m7.x) for m in k.modes}
    assert modes6 == {6, -6}
    assert modes7 == {7, -7}


def test_mub_4d_golden_matrix():
    # X-basis amplitudes over Z order (+6, -6, +7, -7), all +-1/2.
    mub = ss.mub_pair("4D")
    want = 0.5 * np.array(
        [
            [1, 1, 1, 1],
            [1, 1, -1, -1],
            [1, -1, 1, -1],
            [1, -1, -1, 1],
        ],
        dtype=float,
    )
    got = np.array(
        [[x.amplitude(m) for m in (6, -6, 7, -7)] for x in mub.x]
    )
    assert np.allclose(got, want)


@pytest.mark.parametrize("label", ss.DIM_LABELS)
def test_mub_orthonormal_and_unbiased(label):
    mub = ss.mub_pair(label)
    d = mub.dim
    for basis in (mub.z, mub.x):
        g = np.array([[a.overlap(b) for b in basis] for a in basis])
        assert np.allclose(g, np.eye(d), atol=1e-12)
    for a in mub.z:
        for b in mub.x:
            assert abs(b.overlap(a)) ** 2 == pytest.approx(1.0 / d, abs=1e-12)


def test_mub_unknown_label():
    with pytest.raises(DomainError):
        ss.mub_pair("3D")


def test_born_rule_distribution():
    mub = ss.mub_pair("4D")
    p = mub.z[0].probs_in_basis(mub.x)
    assert np.allclose(p, 0.25)


# ------------------------------------------------------------ distributions

def test_as_distribution_policy():
    p = ss.as_distribution([0.5, 0.5])
    assert np.allclose(p, [0.5, 0.5])
    q = ss.as_distribution([0.25, 0.25, 0.25, 0.25 + 3e-7])
    assert q.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(NormalizationError):
        ss.as_distribution([0.6, 0.6])
    with pytest.raises(DomainError):
        ss.as_distribution([1.1, -0.1])


def test_fidelity_oracles():
    # Concentrated vs spread: sqrt(0.9).
    assert ss.fidelity([1, 0], [0.9, 0.1]) == pytest.approx(
        math.sqrt(0.9), abs=1e-12
    )
    assert ss.fidelity([0.25] * 4, [0.25] * 4) == pytest.approx(1.0, abs=1e-12)
    # Disjoint support.
    assert ss.fidelity([1, 0], [0, 1]) == 0.0


@given(
    st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=2, max_size=8),
    st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=2, max_size=8),
)
def test_fidelity_bounds_and_symmetry(raw_p, raw_r):
    n = min(len(raw_p), len(raw_r))
    p = np.array(raw_p[:n]) / np.sum(raw_p[:n])
    r = np.array(raw_r[:n]) / np.sum(raw_r[:n])
    f = ss.fidelity(p, r)
    assert 0.0 <= f <= 1.0 + 1e-12
    assert f == pytest.approx(ss.fidelity(r, p), abs=1e-12)


# ----------------------------------------------------------- entropies

def test_h2_closed_form_points():
    assert ss.h_d(0.0, 2) == 0.0
    assert ss.h_d(0.5, 2) == pytest.approx(1.0, abs=1e-12)
    # -0.11 log2(0.11) - 0.89 log2(0.89) = 0.499916...
    assert ss.h_d(0.11, 2) == pytest.approx(0.49991, abs=1e-4)


def test_h4_frozen_points():
    # Maximum at x = 3/4 equals log2(4).
    assert ss.h_d(0.75, 4) == pytest.approx(2.0, abs=1e-12)
    # Scalar evaluations frozen to 4-5 decimals.
    assert ss.h_d(0.141, 4) == pytest.approx(0.81033, abs=2e-4)
    assert ss.h_d(0.181, 4) == pytest.approx(0.96914, abs=2e-4)


def test_h_d_domain():
    with pytest.raises(DomainError):
        ss.h_d(0.51, 2)
    with pytest.raises(DomainError):
        ss.h_d(-0.01, 2)
    with pytest.raises(DomainError):
        ss.h_d(0.1, 1)


@given(st.integers(min_value=2, max_value=8), st.floats(min_value=0.0, max_value=1.0))
def test_h_d_monotone_on_domain(dim, frac):
    upper = (dim - 1) / dim
    x = frac * upper
    h = ss.h_d(x, dim)
    assert 0.0 <= h <= math.log2(dim) + 1e-12
    if x + 1e-4 <= upper:
        assert ss.h_d(x + 1e-4, dim) >= h - 1e-12


# ----------------------------------------------------------- thresholds

def test_collective_threshold_2d():
    t = ss.qber_threshold_collective(2)
    assert t == pytest.approx(0.110028, abs=5e-6)
    # Defining equation: h_2(t) = log2(2)/2.
    assert ss.h_d(t, 2) == pytest.approx(0.5, abs=1e-5)


def test_collective_threshold_4d():
    t = ss.qber_threshold_collective(4)
    assert t == pytest.approx(0.18929, abs=2.5e-4)
    assert ss.h_d(t, 4) == pytest.approx(1.0, abs=1e-5)


def test_collective_threshold_grows_with_dimension():
    assert ss.qber_threshold_collective(4) > ss.qber_threshold_collective(2)


def test_individual_thresholds_are_stored_constants():
    assert ss.qber_threshold_individual(2) == 0.146
    assert ss.qber_threshold_individual(4) == 0.240
    with pytest.raises(DomainError):
        ss.qber_threshold_individual(3)


@settings(max_examples=25)
@given(st.integers(min_value=2, max_value=6))
def test_collective_threshold_solves_defining_equation(dim):
    t = ss.qber_threshold_collective(dim)
    assert ss.h_d(t, dim) == pytest.approx(math.log2(dim) / 2.0, abs=1e-5)
