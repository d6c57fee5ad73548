"""Qudit state space for keys encoded in orbital angular momentum.

The alphabet lives on four fiber modes with topological charge
l in (-7, -6, +6, +7), kept in that canonical order everywhere.  A key
of dimension D uses a subset of these modes as its computational (Z)
basis and balanced superpositions as the mutually unbiased X basis.

Four encodings are supported:

  2D    Z = {|-6>, |-7>}           X = (|-6> +- |-7>)/sqrt(2)
  4D    Z = {|+6>,|-6>,|+7>,|-7>}  X = four-term superpositions
  MUX6  Z = {|+6>, |-6>}           X = (|+6> +- |-6>)/sqrt(2)
  MUX7  Z = {|+7>, |-7>}           X = (|+7> +- |-7>)/sqrt(2)

MUX6 and MUX7 are the two channels of the mode-multiplexed protocol and
occupy disjoint mode pairs, which is what lets them run simultaneously.

Entropy helpers and the QBER thresholds for collective and individual
attacks on a D-dimensional protocol live here too, since they are pure
functions of the dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import DomainError, ModeSetError, NormalizationError

#: Canonical ordering of the mode alphabet.  Vectors, crosstalk matrices
#: and detection matrices all index modes in this order.
MODE_ORDER: tuple[int, ...] = (-7, -6, 6, 7)

#: Dimension labels accepted throughout the package.
DIM_LABELS: tuple[str, ...] = ("2D", "4D", "MUX6", "MUX7")

# Normalization policy: a ket or distribution whose norm is within
# EXACT_TOL of 1 is taken as is, within RENORM_TOL it is renormalized,
# anything worse is rejected as a real error rather than noise.
EXACT_TOL = 1e-9
RENORM_TOL = 1e-6

#: Maximum tolerable QBER against individual attacks, by dimension.
#: These are fixed reference numbers, not derived at runtime.
INDIVIDUAL_ATTACK_THRESHOLD: dict[int, float] = {2: 0.146, 4: 0.240}


def _check_mode(mode: int) -> int:
    if not isinstance(mode, (int, np.integer)):
        raise ModeSetError(f"mode index must be an integer, got {mode!r}")
    if int(mode) not in MODE_ORDER:
        raise ModeSetError(
            f"mode {int(mode)} outside the alphabet {MODE_ORDER}"
        )
    return int(mode)


class OamKet:
    """Pure qudit state over the OAM alphabet.

    Amplitudes are given as a mapping from mode index to complex
    amplitude.  The constructor enforces the normalization policy:
    norms within 1e-9 of unity pass through, deviations up to 1e-6 are
    silently renormalized, anything larger raises NormalizationError.
    """

    __slots__ = ("_amps",)

    def __init__(self, amplitudes: Mapping[int, complex]):
        amps = {_check_mode(m): complex(a) for m, a in amplitudes.items() if a != 0}
        if not amps:
            raise NormalizationError("ket has no nonzero amplitude")
        norm = math.sqrt(sum(abs(a) ** 2 for a in amps.values()))
        if abs(norm - 1.0) > RENORM_TOL:
            raise NormalizationError(
                f"ket norm {norm:.9f} deviates from 1 by more than {RENORM_TOL}"
            )
        if abs(norm - 1.0) > EXACT_TOL:
            amps = {m: a / norm for m, a in amps.items()}
        self._amps = {m: amps[m] for m in MODE_ORDER if m in amps}

    @property
    def modes(self) -> tuple[int, ...]:
        return tuple(self._amps)

    def amplitude(self, mode: int) -> complex:
        return self._amps.get(_check_mode(mode), 0j)

    def prob(self, mode: int) -> float:
        return abs(self.amplitude(mode)) ** 2

    def vector(self) -> np.ndarray:
        """Amplitudes as a length-4 complex vector in MODE_ORDER."""
        return np.array([self.amplitude(m) for m in MODE_ORDER], dtype=complex)

    def items(self):
        return self._amps.items()

    def overlap(self, other: "OamKet") -> complex:
        """<self|other>."""
        return sum(
            self._amps[m].conjugate() * other._amps[m]
            for m in self._amps
            if m in other._amps
        )

    def probs_in_basis(self, basis: Sequence["OamKet"]) -> np.ndarray:
        """Born-rule outcome distribution for a projective measurement."""
        return np.array([abs(b.overlap(self)) ** 2 for b in basis])

    def close_to(self, other: "OamKet", tol: float = 1e-9) -> bool:
        """Equality up to a global phase."""
        ov = abs(self.overlap(other))
        return abs(ov - 1.0) <= tol

    def __repr__(self) -> str:
        terms = " + ".join(f"({a:.4g})|{m:+d}>" for m, a in self._amps.items())
        return f"OamKet({terms})"


def ket(mode: int) -> OamKet:
    """Computational basis state |mode>."""
    return OamKet({mode: 1.0})


def superposition(terms: Mapping[int, complex]) -> OamKet:
    """Normalized superposition with the given relative amplitudes."""
    norm = math.sqrt(sum(abs(a) ** 2 for a in terms.values()))
    if norm == 0.0:
        raise NormalizationError("all amplitudes vanish")
    return OamKet({m: a / norm for m, a in terms.items()})


@dataclass(frozen=True)
class MubPair:
    """A computational basis and its mutually unbiased partner.

    Construction validates orthonormality of both bases and the
    unbiasedness condition |<z_i|x_j>|^2 = 1/D, so an instance can be
    trusted downstream without rechecking.
    """

    label: str
    dim: int
    z: tuple[OamKet, ...]
    x: tuple[OamKet, ...]

    def __post_init__(self):
        if len(self.z) != self.dim or len(self.x) != self.dim:
            raise DomainError(
                f"{self.label}: need {self.dim} states per basis"
            )
        for name, basis in (("Z", self.z), ("X", self.x)):
            for i, a in enumerate(basis):
                for j, b in enumerate(basis):
                    target = 1.0 if i == j else 0.0
                    if abs(abs(a.overlap(b)) - target) > 1e-9:
                        raise DomainError(
                            f"{self.label}: {name} basis not orthonormal "
                            f"at pair ({i}, {j})"
                        )
        want = 1.0 / self.dim
        for i, a in enumerate(self.z):
            for j, b in enumerate(self.x):
                if abs(abs(a.overlap(b)) ** 2 - want) > 1e-9:
                    raise DomainError(
                        f"{self.label}: bases not mutually unbiased at "
                        f"(z{i}, x{j})"
                    )

    def basis(self, name: str) -> tuple[OamKet, ...]:
        if name == "Z":
            return self.z
        if name == "X":
            return self.x
        raise DomainError(f"unknown basis {name!r}, expected 'Z' or 'X'")


def _build_mub(label: str) -> MubPair:
    s = 1 / math.sqrt(2)
    if label == "2D":
        z = (ket(-6), ket(-7))
        x = (
            superposition({-6: s, -7: s}),
            superposition({-6: s, -7: -s}),
        )
        return MubPair(label, 2, z, x)
    if label == "MUX6":
        z = (ket(6), ket(-6))
        x = (
            superposition({6: s, -6: s}),
            superposition({6: s, -6: -s}),
        )
        return MubPair(label, 2, z, x)
    if label == "MUX7":
        z = (ket(7), ket(-7))
        x = (
            superposition({7: s, -7: s}),
            superposition({7: s, -7: -s}),
        )
        return MubPair(label, 2, z, x)
    if label == "4D":
        z = (ket(6), ket(-6), ket(7), ket(-7))
        x = (
            superposition({6: 0.5, -6: 0.5, 7: 0.5, -7: 0.5}),
            superposition({6: 0.5, -6: 0.5, 7: -0.5, -7: -0.5}),
            superposition({6: 0.5, -6: -0.5, 7: 0.5, -7: -0.5}),
            superposition({6: 0.5, -6: -0.5, 7: -0.5, -7: 0.5}),
        )
        return MubPair(label, 4, z, x)
    raise DomainError(f"unknown dimension label {label!r}, expected one of {DIM_LABELS}")


@lru_cache(maxsize=None)
def mub_pair(label: str) -> MubPair:
    """The MubPair for a dimension label in DIM_LABELS."""
    return _build_mub(label)


def as_distribution(values: Iterable[float]) -> np.ndarray:
    """Validate a probability distribution, applying the normalization policy."""
    p = np.asarray(list(values), dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise DomainError("distribution must be a nonempty 1-d sequence")
    if np.any(p < -EXACT_TOL):
        raise DomainError(f"negative probability in {p}")
    p = np.clip(p, 0.0, None)
    total = float(p.sum())
    if abs(total - 1.0) > RENORM_TOL:
        raise NormalizationError(
            f"distribution sums to {total:.9f}, more than {RENORM_TOL} from 1"
        )
    if abs(total - 1.0) > EXACT_TOL:
        p = p / total
    return p


def fidelity(p: Iterable[float], r: Iterable[float]) -> float:
    """Classical fidelity sum_i sqrt(p_i r_i) between two distributions.

    Equals 1 iff the distributions coincide, and sqrt(r_correct) when p
    is concentrated on a single outcome.
    """
    pa = as_distribution(p)
    ra = as_distribution(r)
    if pa.size != ra.size:
        raise DomainError(f"distribution sizes differ: {pa.size} vs {ra.size}")
    return float(np.sum(np.sqrt(pa * ra)))


def h_d(x: float, dim: int) -> float:
    """Entropy of a D-ary symmetric error channel with total error rate x.

    h_D(x) = -x log2(x/(D-1)) - (1-x) log2(1-x), defined for
    0 <= x <= (D-1)/D where it reaches its maximum log2(D).
    """
    if dim < 2 or int(dim) != dim:
        raise DomainError(f"dimension must be an integer >= 2, got {dim}")
    x = float(x)
    upper = (dim - 1) / dim
    if x < -1e-12 or x > upper + 1e-12:
        raise DomainError(
            f"error rate {x} outside [0, {upper:.6f}] for dimension {dim}"
        )
    x = min(max(x, 0.0), upper)
    if x == 0.0:
        return 0.0
    # log2 split keeps subnormal x out of trouble in the quotient.
    return float(
        -x * (math.log2(x) - math.log2(dim - 1)) - (1.0 - x) * math.log2(1.0 - x)
    )


@lru_cache(maxsize=None)
def qber_threshold_collective(dim: int, tol: float = 1e-6) -> float:
    """Largest QBER with a positive asymptotic rate under collective attacks.

    Solves log2(D) - 2 h_D(e) = 0 by bisection on [0, (D-1)/D] to
    within tol.  For D=2 this is the familiar 11.0% bound.
    """
    target = math.log2(dim) / 2.0
    lo, hi = 0.0, (dim - 1) / dim
    # h_D is monotone increasing on this interval, from 0 to log2(D).
    if h_d(hi, dim) < target:
        raise DomainError(f"no threshold in range for dimension {dim}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if h_d(mid, dim) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def qber_threshold_individual(dim: int) -> float:
    """Reference QBER bound against individual attacks (stored, not derived)."""
    try:
        return INDIVIDUAL_ATTACK_THRESHOLD[dim]
    except KeyError:
        raise DomainError(
            f"no individual-attack threshold on record for dimension {dim}"
        ) from None
