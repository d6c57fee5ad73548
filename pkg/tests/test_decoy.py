"""Decoy-state estimators and key rates.

The main oracle is a synthetic channel with known per-photon physics:
detection probability eta per photon, so Y_n = 1 - (1-eta)^n, and a
uniform error rate on every signal click.  Gains are assembled in the
tests by explicit Poisson mixing, independent of the estimator code,
and the estimator bounds must come out on the correct side of the known
truth and tight for these well-behaved channels.
"""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oamqkd import decoy
from oamqkd import statespace as ss
from oamqkd.exceptions import DecoyDataError, DomainError


def poisson_mixture_gains(alpha, eta, n_max=12):
    """Q(alpha) = sum_n P_n(alpha) [1 - (1-eta)^n], summed explicitly."""
    q = 0.0
    for n in range(n_max + 1):
        p_n = math.exp(-alpha) * alpha**n / math.factorial(n)
        q += p_n * (1.0 - (1.0 - eta) ** n)
    return q


def linear_channel_record(eta=0.1, e=0.03, dim=2):
    it = decoy.DecoyIntensities()
    gains = {k: poisson_mixture_gains(it.value(k), eta) for k in decoy.INTENSITY_KEYS}
    errs = {k: (e if gains[k] > 0 else None) for k in decoy.INTENSITY_KEYS}
    return decoy.GainRecord(
        dim=dim,
        intensities=it,
        gain_z=gains,
        gain_x=gains,
        err_z=errs,
        err_x=errs,
    )


# ------------------------------------------------------------ intensities

def test_default_intensities():
    it = decoy.DecoyIntensities()
    assert (it.mu, it.nu, it.omega) == (0.011, 0.008, 0.0)
    assert (it.p_mu, it.p_nu, it.p_omega) == (0.98, 0.01, 0.01)


def test_intensity_validation():
    with pytest.raises(DomainError):
        decoy.DecoyIntensities(mu=0.008, nu=0.008)
    with pytest.raises(DomainError):
        decoy.DecoyIntensities(omega=-0.001)
    with pytest.raises(DomainError):
        decoy.DecoyIntensities(p_mu=0.5, p_nu=0.1, p_omega=0.1)


# ------------------------------------------------------------- estimators

def test_vacuum_yield_from_clean_channel_is_zero():
    rec = linear_channel_record()
    assert decoy.zero_photon_yield(rec) == 0.0


def test_vacuum_yield_recovers_background():
    it = decoy.DecoyIntensities()
    rec = decoy.poisson_consistent_record(2, it, eta=0.01, e_z=0.02, e_x=0.02, y0=3.2e-7)
    y0 = decoy.zero_photon_yield(rec)
    # With omega = 0 the vacuum gain is the background itself.
    assert y0 == pytest.approx(3.2e-7, rel=1e-9)


def test_single_photon_yield_tight_lower_bound():
    eta = 0.1
    rec = linear_channel_record(eta=eta)
    y1 = decoy.single_photon_yield(rec)
    # True Y1 is eta; the estimator must sit just below it.
    assert y1 <= eta * (1 + 1e-9)
    assert y1 >= 0.99 * eta


def test_single_photon_error_tight_upper_bound():
    e = 0.03
    rec = linear_channel_record(eta=0.1, e=e)
    y1x = decoy.single_photon_yield(rec, "X")
    e1 = decoy.single_photon_error_rate(rec, y1_x=y1x)
    assert e1 >= e * (1 - 1e-9)
    assert e1 <= 1.03 * e


def test_single_photon_gain_weighting():
    it = decoy.DecoyIntensities()
    rec = linear_channel_record()
    w = sum(it.prob(k) * it.value(k) * math.exp(it.value(k)) for k in decoy.INTENSITY_KEYS)
    assert decoy.single_photon_gain(rec, 0.5) == pytest.approx(0.5 * w, abs=1e-15)
    # 0.98*0.011*e^0.011 + 0.01*0.008*e^0.008 = 0.0109799.
    assert w == pytest.approx(0.010980, abs=2e-5)


def test_undefined_error_rate_raises_only_when_needed():
    it = decoy.DecoyIntensities()
    gains = {"mu": 1.6e-4, "nu": 1.2e-4, "omega": 0.0}
    errs = {"mu": 0.05, "nu": 0.05, "omega": None}
    rec = decoy.GainRecord(2, it, gains, gains, errs, errs)
    # omega gain is zero, so its undefined error rate never enters.
    decoy.single_photon_error_rate(rec)
    bad_gains = dict(gains, omega=1e-6)
    rec2 = decoy.GainRecord(2, it, bad_gains, bad_gains, errs, errs)
    with pytest.raises(DecoyDataError):
        decoy.single_photon_error_rate(rec2)


def test_vacuum_yield_clamp_is_reported():
    it = decoy.DecoyIntensities(omega=0.001)
    gains = {"mu": 1.6e-4, "nu": 1.2e-4, "omega": 0.0}
    errs = {"mu": 0.05, "nu": 0.05, "omega": None}
    rec = decoy.GainRecord(2, it, gains, gains, errs, errs)
    notes = []
    y0 = decoy.zero_photon_yield(rec, notes=notes)
    assert y0 == 0.0
    assert any("Y0_Z clamped" in n for n in notes)


def test_error_bound_clamped_to_physical_range():
    it = decoy.DecoyIntensities()
    gains = {"mu": 1.5e-4, "nu": 1.1e-4, "omega": 0.0}
    errs = {"mu": 0.05, "nu": 0.9, "omega": None}
    rec = decoy.GainRecord(2, it, gains, gains, errs, errs)
    notes = []
    e1 = decoy.single_photon_error_rate(rec, notes=notes)
    assert e1 == 0.5  # (D-1)/D for D = 2
    assert any("e1_X clamped" in n for n in notes)


# --------------------------------------------------------------- key rate

def test_key_rate_positive_for_clean_channel():
    rec = linear_channel_record(eta=0.02, e=0.02)
    rep = decoy.secret_key_rate(rec)
    assert rep.rate_per_pulse > 0
    assert rep.rate_bits_per_s == pytest.approx(rep.rate_per_pulse * 600e6)
    assert rep.rate_per_pulse < rep.q1_z * math.log2(rec.dim)
    assert rep.clamp_events == ()


def test_key_rate_negative_balance_clamps_to_zero():
    rec = linear_channel_record(eta=0.02, e=0.30)
    rep = decoy.secret_key_rate(rec)
    assert rep.rate_per_pulse == 0.0
    assert any("rate clamped" in n for n in rep.clamp_events)


def test_key_rate_threshold_crossing():
    # At the collective-attack threshold the one-photon term vanishes;
    # just below it the rate must be positive when all clicks are
    # single-photon-dominated and error correction is cheap.
    t = ss.qber_threshold_collective(2)
    below = decoy.poisson_consistent_record(
        2, decoy.DecoyIntensities(), eta=0.01, e_z=t - 0.02, e_x=t - 0.02
    )
    assert decoy.secret_key_rate(below).rate_per_pulse > 0
    above = decoy.poisson_consistent_record(
        2, decoy.DecoyIntensities(), eta=0.01, e_z=t + 0.02, e_x=t + 0.02
    )
    assert decoy.secret_key_rate(above).rate_per_pulse == 0.0


def test_key_rate_f_ec_penalty_monotone():
    rec = linear_channel_record(eta=0.02, e=0.03)
    r1 = decoy.secret_key_rate(rec, f_ec=1.0)
    r2 = decoy.secret_key_rate(rec, f_ec=1.2)
    assert r2.rate_per_pulse < r1.rate_per_pulse
    with pytest.raises(DomainError):
        decoy.secret_key_rate(rec, f_ec=0.9)


def test_report_round_trip():
    rep = decoy.secret_key_rate(linear_channel_record(eta=0.02, e=0.02))
    again = decoy.KeyRateReport.from_dict(rep.to_dict())
    assert again == rep


def test_combined_rate_sums():
    a = decoy.secret_key_rate(linear_channel_record(eta=0.02, e=0.02))
    b = decoy.secret_key_rate(linear_channel_record(eta=0.03, e=0.02))
    assert decoy.combined_bits_per_s(a, b) == pytest.approx(
        a.rate_bits_per_s + b.rate_bits_per_s
    )


# ---------------------------------------------------- synthesized records

def test_poisson_consistent_record_structure():
    it = decoy.DecoyIntensities()
    rec = decoy.poisson_consistent_record(2, it, eta=0.0145, e_z=0.067, e_x=0.079, y0=3.2e-7)
    assert rec.gain_z["omega"] == pytest.approx(3.2e-7)
    assert rec.err_z["omega"] == pytest.approx(0.5)
    assert rec.gain_z["mu"] > rec.gain_z["nu"] > rec.gain_z["omega"]
    # Error rate at signal intensity is the signal error plus a small
    # background shift: (0.5 - e) * y0/Q ~ 9e-4 here.
    assert rec.err_z["mu"] == pytest.approx(0.0679, abs=2e-4)


def test_poisson_consistent_record_vacuum_channel():
    it = decoy.DecoyIntensities()
    rec = decoy.poisson_consistent_record(2, it, eta=0.01, e_z=0.02, e_x=0.02)
    assert rec.gain_z["omega"] == 0.0
    assert rec.err_z["omega"] is None


# ----------------------------------------------------- sigma propagation

def test_propagate_sigma_linear_function():
    it = decoy.DecoyIntensities()
    gains = {"mu": 1.6e-4, "nu": 1.2e-4, "omega": 1e-7}
    errs = {"mu": 0.05, "nu": 0.05, "omega": 0.5}
    sig = {"mu": 1e-5, "nu": 2e-5, "omega": 1e-8}
    rec = decoy.GainRecord(
        2, it, gains, gains, errs, errs,
        sigma_gain_z=sig, sigma_gain_x={k: 0.0 for k in sig},
        sigma_err_z={k: 0.0 for k in sig}, sigma_err_x={k: 0.0 for k in sig},
    )
    s = decoy.propagate_sigma(lambda r: 3.0 * r.gain_z["mu"], rec)
    assert s == pytest.approx(3e-5, rel=1e-6)
    s2 = decoy.propagate_sigma(lambda r: r.gain_z["mu"] + r.gain_z["nu"], rec)
    assert s2 == pytest.approx(math.hypot(1e-5, 2e-5), rel=1e-6)


def test_propagate_sigma_without_sigmas_is_zero():
    rec = linear_channel_record()
    assert decoy.propagate_sigma(lambda r: r.gain_z["mu"], rec) == 0.0


def test_yield_uncertainty_is_positive_with_sigmas():
    it = decoy.DecoyIntensities()
    base = decoy.poisson_consistent_record(2, it, eta=0.0145, e_z=0.05, e_x=0.06, y0=3.2e-7)
    sig = {k: 0.05 * base.gain_z[k] + 1e-9 for k in decoy.INTENSITY_KEYS}
    rec = decoy.GainRecord(
        2, it, base.gain_z, base.gain_x, base.err_z, base.err_x,
        sigma_gain_z=sig, sigma_gain_x=sig,
    )
    s = decoy.propagate_sigma(lambda r: decoy.single_photon_yield(r), rec)
    assert s > 0


# -------------------------------------------------------------- tallies

class FakeTallies:
    dim = 2
    intensities = decoy.DecoyIntensities()

    def sifted_stats(self, basis):
        if basis == "Z":
            return {
                "mu": (10000, 50, 2, 5),
                "nu": (1000, 4, 0, 1),
                "omega": (1000, 0, 0, 0),
            }
        return {
            "mu": (1000, 6, 0, 1),
            "nu": (100, 1, 0, 0),
            "omega": (100, 0, 0, 0),
        }


def test_gains_from_tallies_arithmetic():
    rec = decoy.gains_from_tallies(FakeTallies())
    assert rec.gain_z["mu"] == pytest.approx(52 / 10000)
    assert rec.err_z["mu"] == pytest.approx(0.1)
    assert rec.sigma_err_z["mu"] == pytest.approx(math.sqrt(0.1 * 0.9 / 50))
    assert rec.err_z["omega"] is None
    assert rec.gain_x["nu"] == pytest.approx(0.01)


def test_gains_from_tallies_requires_pulses():
    class Empty(FakeTallies):
        def sifted_stats(self, basis):
            d = super().sifted_stats(basis)
            d["nu"] = (0, 0, 0, 0)
            return d

    with pytest.raises(DecoyDataError):
        decoy.gains_from_tallies(Empty())


# ------------------------------------------------------------ properties

@settings(max_examples=60, deadline=None)
@given(
    st.floats(min_value=1e-3, max_value=0.5),
    st.floats(min_value=0.0, max_value=0.08),
    st.floats(min_value=0.0, max_value=1e-5),
)
def test_bounds_sit_on_correct_side_of_truth(eta, e, y0):
    it = decoy.DecoyIntensities()
    rec = decoy.poisson_consistent_record(2, it, eta=eta, e_z=e, e_x=e, y0=y0)
    y1_true = y0 + (1 - y0) * eta
    notes = []
    y1 = decoy.single_photon_yield(rec, notes=notes)
    assert y1 <= y1_true * (1 + 5e-3)
    assert y1 >= 0.9 * y1_true
    if e > 1e-9:
        e1 = decoy.single_photon_error_rate(rec, notes=notes)
        assert e1 >= e * (1 - 5e-3)


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=1e-3, max_value=0.3), st.floats(min_value=0.0, max_value=0.10))
def test_rate_never_negative_and_bounded(eta, e):
    rec = decoy.poisson_consistent_record(2, decoy.DecoyIntensities(), eta=eta, e_z=e, e_x=e)
    rep = decoy.secret_key_rate(rec)
    assert rep.rate_per_pulse >= 0.0
    assert rep.rate_per_pulse <= rep.q1_z * math.log2(2) + 1e-15
