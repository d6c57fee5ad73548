"""Decoy-state estimation and secret key rates.

Alice modulates the mean photon number of each pulse between a signal
level mu and two decoys nu > omega.  From the measured gains and error
rates at the three levels, linear programming in closed form bounds the
zero- and single-photon yields from below and the single-photon error
rate from above; those bounds feed the asymptotic key rate

    R = Q1 [log2(D) - h_D(e1)] - Q_mu f_ec h_D(E_mu)

per pulse, with Q1 the single-photon gain in the key basis and e1 the
single-photon error bound in the check basis.

The estimator formulas follow the e^{+alpha} convention throughout:
gains enter multiplied by e^{+alpha}, and the single-photon gain uses
the matching p_alpha alpha e^{+alpha} weights.  Every clamp applied on
the way (negative yield pushed to zero, error bound pushed into its
physical range, negative rate reported as zero) is recorded in the
returned report, never applied silently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Mapping

from . import statespace as ss
from .exceptions import ConfigFileError, DecoyDataError, DomainError

INTENSITY_KEYS = ("mu", "nu", "omega")


@dataclass(frozen=True)
class DecoyIntensities:
    """Signal/decoy mean photon numbers and their emission probabilities."""

    mu: float = 0.011
    nu: float = 0.008
    omega: float = 0.0
    p_mu: float = 0.98
    p_nu: float = 0.01
    p_omega: float = 0.01

    def __post_init__(self):
        if not self.mu > self.nu > self.omega >= 0.0:
            raise DomainError(
                f"need mu > nu > omega >= 0, got {self.mu}, {self.nu}, {self.omega}"
            )
        probs = (self.p_mu, self.p_nu, self.p_omega)
        if any(p <= 0 for p in probs):
            raise DomainError("intensity probabilities must be positive")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise DomainError(f"intensity probabilities sum to {sum(probs)}, not 1")

    def value(self, key: str) -> float:
        return {"mu": self.mu, "nu": self.nu, "omega": self.omega}[key]

    def prob(self, key: str) -> float:
        return {"mu": self.p_mu, "nu": self.p_nu, "omega": self.p_omega}[key]


def _check_gain_map(name: str, m: Mapping[str, float]) -> dict[str, float]:
    out = {}
    for k in INTENSITY_KEYS:
        if k not in m:
            raise DomainError(f"{name} is missing intensity {k!r}")
        v = float(m[k])
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"{name}[{k!r}]={v} outside [0, 1]")
        out[k] = v
    return out


def _check_err_map(name: str, m: Mapping[str, float | None]) -> dict[str, float | None]:
    out: dict[str, float | None] = {}
    for k in INTENSITY_KEYS:
        v = m.get(k)
        if v is not None:
            v = float(v)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name}[{k!r}]={v} outside [0, 1]")
        out[k] = v
    return out


@dataclass(frozen=True)
class GainRecord:
    """Measured (or synthesized) per-intensity gains and error rates.

    gain_*[k] is the sifted click probability per pulse at intensity k;
    err_*[k] the QBER among conclusive sifted clicks, or None when no
    conclusive click was seen.  The sigma maps carry one standard error
    per entry and may be omitted for exact records.
    """

    dim: int
    intensities: DecoyIntensities
    gain_z: Mapping[str, float]
    gain_x: Mapping[str, float]
    err_z: Mapping[str, float | None]
    err_x: Mapping[str, float | None]
    sigma_gain_z: Mapping[str, float] | None = None
    sigma_gain_x: Mapping[str, float] | None = None
    sigma_err_z: Mapping[str, float] | None = None
    sigma_err_x: Mapping[str, float] | None = None

    def __post_init__(self):
        if self.dim < 2:
            raise DomainError(f"dimension {self.dim} must be at least 2")
        object.__setattr__(self, "gain_z", _check_gain_map("gain_z", self.gain_z))
        object.__setattr__(self, "gain_x", _check_gain_map("gain_x", self.gain_x))
        object.__setattr__(self, "err_z", _check_err_map("err_z", self.err_z))
        object.__setattr__(self, "err_x", _check_err_map("err_x", self.err_x))

    def gain(self, basis: str) -> Mapping[str, float]:
        return self.gain_z if basis == "Z" else self.gain_x

    def err(self, basis: str) -> Mapping[str, float | None]:
        return self.err_z if basis == "Z" else self.err_x


def zero_photon_yield(rec: GainRecord, basis: str = "Z",
                      notes: list[str] | None = None) -> float:
    """Lower bound on the vacuum yield Y0 in the given basis."""
    it = rec.intensities
    g = rec.gain(basis)
    nu, om = it.nu, it.omega
    raw = (nu * g["omega"] * math.exp(om) - om * g["nu"] * math.exp(nu)) / (nu - om)
    return _clamp(raw, 0.0, 1.0, f"Y0_{basis}", notes)


def single_photon_yield(rec: GainRecord, basis: str = "Z",
                        y0: float | None = None,
                        notes: list[str] | None = None) -> float:
    """Lower bound on the single-photon yield Y1 in the given basis."""
    it = rec.intensities
    g = rec.gain(basis)
    mu, nu, om = it.mu, it.nu, it.omega
    if y0 is None:
        y0 = zero_photon_yield(rec, basis, notes)
    denom = mu * nu - mu * om - nu**2 + om**2
    if denom <= 0:
        raise DomainError("intensity choice makes the yield estimator singular")
    raw = (mu / denom) * (
        g["nu"] * math.exp(nu)
        - g["omega"] * math.exp(om)
        - ((nu**2 - om**2) / mu**2) * (g["mu"] * math.exp(mu) - y0)
    )
    return _clamp(raw, 0.0, 1.0, f"Y1_{basis}", notes)


def single_photon_gain(rec: GainRecord, y1: float) -> float:
    """Q1: the single-photon yield weighted over the intensity mix."""
    it = rec.intensities
    w = sum(
        it.prob(k) * it.value(k) * math.exp(it.value(k)) for k in INTENSITY_KEYS
    )
    return w * y1


def single_photon_error_rate(rec: GainRecord, y1_x: float | None = None,
                             notes: list[str] | None = None) -> float:
    """Upper bound on the single-photon error rate in the check basis."""
    it = rec.intensities
    g = rec.gain_x
    e = rec.err_x
    nu, om = it.nu, it.omega
    if y1_x is None:
        y1_x = single_photon_yield(rec, "X", notes=notes)
    if y1_x <= 0:
        raise DecoyDataError("single-photon X yield bound is zero; error bound undefined")
    terms = []
    for k, a in (("nu", nu), ("omega", om)):
        if g[k] == 0.0:
            terms.append(0.0)
            continue
        if e[k] is None:
            raise DecoyDataError(
                f"error rate at intensity {k!r} is undefined but its gain is nonzero"
            )
        terms.append(e[k] * g[k] * math.exp(a))
    raw = (terms[0] - terms[1]) / ((nu - om) * y1_x)
    return _clamp(raw, 0.0, (rec.dim - 1) / rec.dim, "e1_X", notes)


def _clamp(value: float, lo: float, hi: float, name: str,
           notes: list[str] | None) -> float:
    if value < lo:
        if notes is not None:
            notes.append(f"{name} clamped from {value:.6g} to {lo:g}")
        return lo
    if value > hi:
        if notes is not None:
            notes.append(f"{name} clamped from {value:.6g} to {hi:g}")
        return hi
    return value


@dataclass(frozen=True)
class KeyRateReport:
    """Everything the rate computation produced, clamps included."""

    dim: int
    y0_z: float
    y1_z: float
    y1_x: float
    q1_z: float
    e1_x: float
    gain_mu_z: float
    err_mu_z: float
    rate_per_pulse: float
    rate_bits_per_s: float
    rep_rate_hz: float
    f_ec: float
    clamp_events: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clamp_events"] = list(self.clamp_events)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "KeyRateReport":
        d = dict(d)
        d["clamp_events"] = tuple(d.get("clamp_events", ()))
        return cls(**d)


def secret_key_rate(rec: GainRecord, rep_rate_hz: float = 600e6,
                    f_ec: float = 1.0) -> KeyRateReport:
    """Asymptotic secret key rate from a gain record.

    Privacy amplification runs against the X-basis single-photon error
    bound; error correction pays for the full signal QBER in Z at
    efficiency f_ec.  A negative balance is reported as rate zero with
    a clamp note.
    """
    if f_ec < 1.0:
        raise DomainError(f"error-correction inefficiency f_ec={f_ec} below 1")
    notes: list[str] = []
    y0_z = zero_photon_yield(rec, "Z", notes)
    y1_z = single_photon_yield(rec, "Z", y0=y0_z, notes=notes)
    y1_x = single_photon_yield(rec, "X", notes=notes)
    e1_x = single_photon_error_rate(rec, y1_x=y1_x, notes=notes)
    q1 = single_photon_gain(rec, y1_z)
    q_mu = rec.gain_z["mu"]
    e_mu = rec.err_z["mu"]
    if e_mu is None:
        raise DecoyDataError("signal-intensity Z error rate is undefined")
    raw = q1 * (math.log2(rec.dim) - ss.h_d(e1_x, rec.dim)) - q_mu * f_ec * ss.h_d(
        e_mu, rec.dim
    )
    rate = _clamp(raw, 0.0, float("inf"), "rate", notes)
    return KeyRateReport(
        dim=rec.dim,
        y0_z=y0_z,
        y1_z=y1_z,
        y1_x=y1_x,
        q1_z=q1,
        e1_x=e1_x,
        gain_mu_z=q_mu,
        err_mu_z=e_mu,
        rate_per_pulse=rate,
        rate_bits_per_s=rate * rep_rate_hz,
        rep_rate_hz=rep_rate_hz,
        f_ec=f_ec,
        clamp_events=tuple(notes),
    )


def combined_bits_per_s(*reports: KeyRateReport) -> float:
    """Total rate of protocols running in parallel (multiplexed keys)."""
    return sum(r.rate_bits_per_s for r in reports)


def poisson_consistent_record(
    dim: int,
    intensities: DecoyIntensities,
    eta: float,
    e_z: float,
    e_x: float,
    y0: float = 0.0,
    eta_x: float | None = None,
) -> GainRecord:
    """Synthesize a self-consistent record for a memoryless channel.

    Detection probability eta per photon gives Q(alpha) =
    y0 + (1 - y0)(1 - e^(-eta alpha)); signal clicks err at the given
    basis rate, background clicks err at 1/2.  eta_x defaults to eta.
    """
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"eta={eta} outside [0, 1]")
    if not 0.0 <= y0 <= 1.0:
        raise DomainError(f"y0={y0} outside [0, 1]")
    if eta_x is None:
        eta_x = eta
    gains: dict[str, dict[str, float]] = {"Z": {}, "X": {}}
    errs: dict[str, dict[str, float | None]] = {"Z": {}, "X": {}}
    for basis, eff, e in (("Z", eta, e_z), ("X", eta_x, e_x)):
        for k in INTENSITY_KEYS:
            a = intensities.value(k)
            p_sig = 1.0 - math.exp(-eff * a)
            q = y0 + (1.0 - y0) * p_sig
            gains[basis][k] = q
            if q == 0.0:
                errs[basis][k] = None
            else:
                bad = e * p_sig * (1.0 - y0) + 0.5 * y0 * (1.0 - p_sig)
                errs[basis][k] = bad / q
    return GainRecord(
        dim=dim,
        intensities=intensities,
        gain_z=gains["Z"],
        gain_x=gains["X"],
        err_z=errs["Z"],
        err_x=errs["X"],
    )


def propagate_sigma(
    fn: Callable[[GainRecord], float], rec: GainRecord, rel_step: float = 1e-3
) -> float:
    """Standard error of fn(rec) from the record's sigma maps.

    First-order propagation with central finite differences over every
    gain and error entry that has a nonzero sigma.  Records without
    sigma maps give zero.
    """
    pairs = [
        ("gain_z", "sigma_gain_z"),
        ("gain_x", "sigma_gain_x"),
        ("err_z", "sigma_err_z"),
        ("err_x", "sigma_err_x"),
    ]
    var = 0.0
    for value_field, sigma_field in pairs:
        sigmas = getattr(rec, sigma_field)
        if not sigmas:
            continue
        for k in INTENSITY_KEYS:
            s = float(sigmas.get(k, 0.0))
            if s == 0.0:
                continue
            base = getattr(rec, value_field)[k]
            if base is None:
                continue
            h = max(s * rel_step, 1e-12)
            hi = _with_entry(rec, value_field, k, min(base + h, 1.0))
            lo = _with_entry(rec, value_field, k, max(base - h, 0.0))
            span = getattr(hi, value_field)[k] - getattr(lo, value_field)[k]
            if span == 0.0:
                continue
            deriv = (fn(hi) - fn(lo)) / span
            var += (deriv * s) ** 2
    return math.sqrt(var)


def _with_entry(rec: GainRecord, field_name: str, key: str, value: float) -> GainRecord:
    maps = {
        "gain_z": dict(rec.gain_z),
        "gain_x": dict(rec.gain_x),
        "err_z": dict(rec.err_z),
        "err_x": dict(rec.err_x),
    }
    maps[field_name][key] = value
    return GainRecord(
        dim=rec.dim,
        intensities=rec.intensities,
        gain_z=maps["gain_z"],
        gain_x=maps["gain_x"],
        err_z=maps["err_z"],
        err_x=maps["err_x"],
        sigma_gain_z=rec.sigma_gain_z,
        sigma_gain_x=rec.sigma_gain_x,
        sigma_err_z=rec.sigma_err_z,
        sigma_err_x=rec.sigma_err_x,
    )


def gains_from_tallies(tallies) -> GainRecord:
    """Build a GainRecord from simulation tallies.

    Accepts any object exposing dim, intensities, and
    sifted_stats(basis) -> {intensity: (pulses, conclusive, multi,
    errors)}; the pulse-level engine's tally type does.  Gains count
    conclusive plus multi clicks; error rates condition on conclusive
    clicks only.
    """
    gain: dict[str, dict[str, float]] = {}
    err: dict[str, dict[str, float | None]] = {}
    sg: dict[str, dict[str, float]] = {}
    se: dict[str, dict[str, float]] = {}
    for basis in ("Z", "X"):
        stats = tallies.sifted_stats(basis)
        gain[basis], err[basis], sg[basis], se[basis] = {}, {}, {}, {}
        for k in INTENSITY_KEYS:
            pulses, conclusive, multi, errors = stats[k]
            if pulses == 0:
                raise DecoyDataError(
                    f"no sifted pulses at intensity {k!r} in basis {basis}"
                )
            q = (conclusive + multi) / pulses
            gain[basis][k] = q
            sg[basis][k] = math.sqrt(max(q * (1 - q), 0.0) / pulses)
            if conclusive == 0:
                err[basis][k] = None
                se[basis][k] = 0.0
            else:
                e = errors / conclusive
                err[basis][k] = e
                se[basis][k] = math.sqrt(max(e * (1 - e), 0.0) / conclusive)
    return GainRecord(
        dim=tallies.dim,
        intensities=tallies.intensities,
        gain_z=gain["Z"],
        gain_x=gain["X"],
        err_z=err["Z"],
        err_x=err["X"],
        sigma_gain_z=sg["Z"],
        sigma_gain_x=sg["X"],
        sigma_err_z=se["Z"],
        sigma_err_x=se["X"],
    )


_RECORD_MAPS = ("gain_z", "gain_x", "err_z", "err_x")
_RECORD_SIGMA_MAPS = ("sigma_gain_z", "sigma_gain_x", "sigma_err_z", "sigma_err_x")


def gain_record_from_dict(data: Mapping) -> GainRecord:
    """Build a GainRecord from a parsed parameter file.

    Layout mirrors the dataclass: a scalar `dim`, an `[intensities]`
    table, `[gain_z]`/`[gain_x]`/`[err_z]`/`[err_x]` tables keyed by
    mu/nu/omega, and optional sigma tables.  Measured gain tables can
    be typed in as-is, using the same gains for both bases when only
    one column is given.
    """
    known = {"dim", "intensities", *_RECORD_MAPS, *_RECORD_SIGMA_MAPS}
    for key in data:
        if key not in known:
            raise ConfigFileError(
                f"unknown key (expected one of {sorted(known)})", field=key
            )
    for key in ("dim", "intensities", *_RECORD_MAPS):
        if key not in data:
            raise ConfigFileError("required key missing", field=key)
    if not isinstance(data["dim"], int):
        raise ConfigFileError("dim must be an integer", field="dim")

    def table(key: str, allow_none: bool) -> dict:
        raw = data.get(key)
        if raw is None:
            return None
        if not isinstance(raw, Mapping):
            raise ConfigFileError("expected a table keyed by intensity", field=key)
        out = {}
        for k, v in raw.items():
            if k not in INTENSITY_KEYS:
                raise ConfigFileError(
                    f"unknown intensity (expected one of {INTENSITY_KEYS})",
                    field=f"{key}.{k}",
                )
            if v is None and not allow_none:
                raise ConfigFileError("value required", field=f"{key}.{k}")
            out[k] = v if v is None else float(v)
        return out

    int_table = data["intensities"]
    if not isinstance(int_table, Mapping):
        raise ConfigFileError("expected a table", field="intensities")
    try:
        intensities = DecoyIntensities(**{k: float(v) for k, v in int_table.items()})
    except TypeError as exc:
        raise ConfigFileError(str(exc), field="intensities") from exc
    except DomainError as exc:
        raise ConfigFileError(str(exc), field="intensities") from exc
    try:
        return GainRecord(
            dim=data["dim"],
            intensities=intensities,
            gain_z=table("gain_z", False),
            gain_x=table("gain_x", False),
            err_z=table("err_z", True),
            err_x=table("err_x", True),
            sigma_gain_z=table("sigma_gain_z", False),
            sigma_gain_x=table("sigma_gain_x", False),
            sigma_err_z=table("sigma_err_z", False),
            sigma_err_x=table("sigma_err_x", False),
        )
    except DomainError as exc:
        raise ConfigFileError(str(exc)) from exc
