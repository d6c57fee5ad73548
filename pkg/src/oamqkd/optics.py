"""Preparation and measurement optics.

State preparation starts from a Gaussian photon in a chosen polarization
and pushes it through vortex phase plates.  A plate of charge q adds
topological charge +2q to the left-circular component and -2q to the
right-circular one, so after the plate the polarization is antialigned
with the sign of l: positive modes carry R, negative modes carry L.
One plate (q = 3 or q = 7/2) makes the single-family states; splitting
the photon over both plates in an interferometer and recombining with a
relative phase of 0 or pi makes the cross-family superpositions.

Sixteen preparation settings are supported, four per family:

  psi1..psi4        |+6>, |-6>, |+7>, |-7>
  xi1..xi4          (|+6> +- |-6>)/sqrt2, (|+7> +- |-7>)/sqrt2
  varphi1..varphi4  (|+6> +- |+7>)/sqrt2, (|-6> +- |-7>)/sqrt2
  phi1..phi4        four-term superpositions, all amplitudes +-1/2

Detection reverses the story.  A mode sorter splits the photon by the
parity of |l| into an even port (|l| = 6) and an odd port (|l| = 7) with
finite visibility; behind each port, polarization analysis conditioned
on the antialignment rule resolves the sign of l (circular basis) or
the in-family superposition (diagonal basis).  The cross-family
receiver instead recombines the two ports interferometrically and
projects onto the varphi or phi set directly.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import statespace as ss
from .exceptions import DomainError, ModeSetError, NormalizationError

#: Modes a photon component may occupy: the alphabet plus the Gaussian
#: marker l = 0 used between preparation stages.
ALLOWED_MODES: frozenset[int] = frozenset(ss.MODE_ORDER) | {0}

#: Same-|l| partner with the sign preserved; where a misrouted photon
#: lands after the sorter sends it out the wrong port.
PARITY_PARTNER: dict[int, int] = {6: 7, 7: 6, -6: -7, -7: -6}

STATE_SETS: dict[str, tuple[str, ...]] = {
    "psi": ("psi1", "psi2", "psi3", "psi4"),
    "xi": ("xi1", "xi2", "xi3", "xi4"),
    "varphi": ("varphi1", "varphi2", "varphi3", "varphi4"),
    "phi": ("phi1", "phi2", "phi3", "phi4"),
}

ALL_STATE_LABELS: tuple[str, ...] = tuple(
    label for labels in STATE_SETS.values() for label in labels
)

#: Label prepared instead when the input polarization flips to its
#: orthogonal partner (L <-> R, D <-> A).
FLIP_PARTNER: dict[str, str] = {
    "psi1": "psi2", "psi2": "psi1", "psi3": "psi4", "psi4": "psi3",
    "xi1": "xi2", "xi2": "xi1", "xi3": "xi4", "xi4": "xi3",
    "varphi1": "varphi3", "varphi3": "varphi1",
    "varphi2": "varphi4", "varphi4": "varphi2",
    "phi1": "phi3", "phi3": "phi1", "phi2": "phi4", "phi4": "phi2",
}

# Preparation recipe per label: input polarization, plates used, and the
# interferometer recombination sign when both plates are involved.
_RECIPES: dict[str, tuple[str, str, int]] = {
    "psi1": ("L", "q1", +1), "psi2": ("R", "q1", +1),
    "psi3": ("L", "q2", +1), "psi4": ("R", "q2", +1),
    "xi1": ("D", "q1", +1), "xi2": ("A", "q1", +1),
    "xi3": ("D", "q2", +1), "xi4": ("A", "q2", +1),
    "varphi1": ("L", "both", +1), "varphi2": ("L", "both", -1),
    "varphi3": ("R", "both", +1), "varphi4": ("R", "both", -1),
    "phi1": ("D", "both", +1), "phi2": ("D", "both", -1),
    "phi3": ("A", "both", +1), "phi4": ("A", "both", -1),
}

_JONES = {
    "L": {"L": 1.0 + 0j},
    "R": {"R": 1.0 + 0j},
    "D": {"L": 1 / math.sqrt(2) + 0j, "R": 1 / math.sqrt(2) + 0j},
    "A": {"L": 1 / math.sqrt(2) + 0j, "R": -1 / math.sqrt(2) + 0j},
}


def parity_of(mode: int) -> str:
    if mode not in ALLOWED_MODES:
        raise ModeSetError(f"mode {mode} outside {sorted(ALLOWED_MODES)}")
    return "even" if abs(mode) % 2 == 0 else "odd"


@dataclass(frozen=True)
class VortexPlateSpec:
    """Vortex phase plate of charge q; 2q must be a nonzero integer."""

    q: float

    def __post_init__(self):
        twice = 2.0 * self.q
        if abs(twice - round(twice)) > 1e-12 or round(twice) == 0:
            raise DomainError(f"plate charge q={self.q} must be half-integer and nonzero")

    @property
    def shift(self) -> int:
        return int(round(2.0 * self.q))


PLATE_Q1 = VortexPlateSpec(3.0)
PLATE_Q2 = VortexPlateSpec(3.5)


@dataclass(frozen=True)
class ModeSorterSpec:
    """Parity sorter with per-port interference visibility."""

    visibility_even: float = 0.97
    visibility_odd: float = 0.98

    def __post_init__(self):
        for name in ("visibility_even", "visibility_odd"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name}={v} outside [0, 1]")

    def visibility(self, parity: str) -> float:
        if parity == "even":
            return self.visibility_even
        if parity == "odd":
            return self.visibility_odd
        raise DomainError(f"unknown parity {parity!r}")

    def correct_port_prob(self, parity: str) -> float:
        return 0.5 * (1.0 + self.visibility(parity))


@dataclass(frozen=True)
class ReceiverSpec:
    """One of the two receiver assemblies.

    kind "sorted": parity ports with polarization analysis behind each,
    used for the psi and xi sets.  kind "interferometric": the ports are
    recombined and projected onto the varphi or phi set directly.
    mz_phase_offset_rad is a static phase error of that recombination.
    """

    kind: str
    insertion_loss_db: float
    mz_phase_offset_rad: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sorted", "interferometric"):
            raise DomainError(f"unknown receiver kind {self.kind!r}")
        if self.insertion_loss_db < 0.0:
            raise DomainError("insertion loss cannot be negative")

    @property
    def transmission(self) -> float:
        return 10.0 ** (-self.insertion_loss_db / 10.0)


RECEIVER_SORTED_DEFAULT = ReceiverSpec("sorted", insertion_loss_db=9.0)
RECEIVER_INTERF_DEFAULT = ReceiverSpec("interferometric", insertion_loss_db=10.0)


class PhotonState:
    """Pure single-photon state over (mode, polarization) components.

    Polarization labels are 'L' and 'R'.  Modes are restricted to the
    alphabet plus the l = 0 marker; the marker may carry either
    polarization, alphabet modes normally follow the antialignment rule
    but this class does not enforce it (the preparation does).
    """

    __slots__ = ("_comps", "time_offset_ns")

    def __init__(self, components: Mapping[tuple[int, str], complex],
                 time_offset_ns: float = 0.0):
        comps = {}
        for (mode, pol), amp in components.items():
            if mode not in ALLOWED_MODES:
                raise ModeSetError(f"mode {mode} outside {sorted(ALLOWED_MODES)}")
            if pol not in ("L", "R"):
                raise DomainError(f"polarization {pol!r} must be 'L' or 'R'")
            if amp != 0:
                comps[(int(mode), pol)] = complex(amp)
        if not comps:
            raise NormalizationError("photon state has no nonzero component")
        norm = math.sqrt(sum(abs(a) ** 2 for a in comps.values()))
        if abs(norm - 1.0) > ss.RENORM_TOL:
            raise NormalizationError(
                f"photon norm {norm:.9f} deviates from 1 by more than {ss.RENORM_TOL}"
            )
        if abs(norm - 1.0) > ss.EXACT_TOL:
            comps = {k: a / norm for k, a in comps.items()}
        self._comps = comps
        self.time_offset_ns = float(time_offset_ns)

    def items(self):
        return self._comps.items()

    def amplitude(self, mode: int, pol: str) -> complex:
        return self._comps.get((mode, pol), 0j)

    def modes(self) -> tuple[int, ...]:
        return tuple(sorted({m for m, _ in self._comps}))

    def parity_weight(self, parity: str) -> float:
        return sum(
            abs(a) ** 2 for (m, _), a in self._comps.items() if parity_of(m) == parity
        )

    def restricted_to_parity(self, parity: str) -> "PhotonState":
        comps = {
            k: a for k, a in self._comps.items() if parity_of(k[0]) == parity
        }
        if not comps:
            raise DomainError(f"no {parity} component to restrict to")
        return PhotonState(_renorm(comps), self.time_offset_ns)

    def oam_marginal(self) -> ss.OamKet:
        """Strip polarization, checking the antialignment rule first."""
        amps: dict[int, complex] = {}
        for (mode, pol), a in self._comps.items():
            if mode == 0:
                raise DomainError("Gaussian marker component is not an alphabet mode")
            want = "R" if mode > 0 else "L"
            if pol != want:
                raise DomainError(
                    f"component ({mode}, {pol}) violates the antialignment rule"
                )
            amps[mode] = amps.get(mode, 0j) + a
        return ss.OamKet(amps)

    def __repr__(self) -> str:
        terms = " + ".join(
            f"({a:.4g})|{m:+d},{p}>" for (m, p), a in sorted(self._comps.items())
        )
        return f"PhotonState({terms})"


def _renorm(comps: Mapping[tuple[int, str], complex]) -> dict[tuple[int, str], complex]:
    norm = math.sqrt(sum(abs(a) ** 2 for a in comps.values()))
    return {k: a / norm for k, a in comps.items()}


def photon_from_ket(ket: ss.OamKet, time_offset_ns: float = 0.0) -> PhotonState:
    """Lift a qudit ket to a photon state via the antialignment rule."""
    comps = {
        (m, "R" if m > 0 else "L"): a for m, a in ket.items()
    }
    return PhotonState(comps, time_offset_ns)


def vortex_transform(photon: PhotonState, plate: VortexPlateSpec) -> PhotonState:
    """Pass a photon through a vortex plate.

    |L, l> -> |R, l + 2q> and |R, l> -> |L, l - 2q>.  A resulting mode
    outside the alphabet (or the marker) is a configuration the
    hardware cannot represent and raises ModeSetError.
    """
    out: dict[tuple[int, str], complex] = {}
    for (mode, pol), amp in photon.items():
        if pol == "L":
            new = (mode + plate.shift, "R")
        else:
            new = (mode - plate.shift, "L")
        if new[0] not in ALLOWED_MODES:
            raise ModeSetError(
                f"plate q={plate.q} maps mode {mode} to {new[0]}, outside the alphabet"
            )
        out[new] = out.get(new, 0j) + amp
    return PhotonState(out, photon.time_offset_ns)


def gaussian_input(pol: str) -> PhotonState:
    """Gaussian marker photon in the given polarization label (L/R/D/A)."""
    try:
        jones = _JONES[pol]
    except KeyError:
        raise DomainError(f"unknown polarization label {pol!r}") from None
    return PhotonState({(0, p): a for p, a in jones.items()})


def prepare_photon(label: str, pol_phase: float = 0.0,
                   arm_phase: float = 0.0) -> PhotonState:
    """Prepare one of the sixteen encoded states.

    pol_phase is a phase error between the two circular input
    components; it lands on the negative modes.  arm_phase is a phase
    error of the two-plate interferometer (path plus recombiner); it
    lands on the |l| = 7 modes.  Both default to zero for the ideal
    state.
    """
    try:
        pol, plates, sign = _RECIPES[label]
    except KeyError:
        raise DomainError(f"unknown state label {label!r}") from None
    src = gaussian_input(pol)
    if pol_phase != 0.0:
        rot = cmath.exp(1j * pol_phase)
        src = PhotonState(
            {k: (a * rot if k[1] == "R" else a) for k, a in src.items()}
        )
    if plates == "q1":
        out = vortex_transform(src, PLATE_Q1)
    elif plates == "q2":
        out = vortex_transform(src, PLATE_Q2)
    else:
        a1 = vortex_transform(src, PLATE_Q1)
        a2 = vortex_transform(src, PLATE_Q2)
        s = 1 / math.sqrt(2)
        comps: dict[tuple[int, str], complex] = {}
        for k, a in a1.items():
            comps[k] = comps.get(k, 0j) + s * a
        for k, a in a2.items():
            comps[k] = comps.get(k, 0j) + sign * s * a
        out = PhotonState(comps)
    if arm_phase != 0.0:
        rot = cmath.exp(1j * arm_phase)
        out = PhotonState(
            {k: (a * rot if abs(k[0]) == 7 else a) for k, a in out.items()},
            out.time_offset_ns,
        )
    return out


def ideal_ket(label: str) -> ss.OamKet:
    """The qudit ket a perfect preparation of `label` encodes."""
    return prepare_photon(label).oam_marginal()


def incoherent_fraction(photon: PhotonState, sorter: ModeSorterSpec) -> float:
    """Probability that the sorter destroys cross-parity coherence.

    Per parity branch the sorter leaks (1 - V)/2 of the intensity into
    the wrong transverse mode; that leakage is what spoils both port
    routing (sorted receiver) and phase closure (interferometric
    receiver), so the same number drives both.
    """
    return sum(
        photon.parity_weight(p) * 0.5 * (1.0 - sorter.visibility(p))
        for p in ("even", "odd")
    )


def sort_parity(
    photon: PhotonState, sorter: ModeSorterSpec, rng: np.random.Generator
) -> tuple[str, PhotonState]:
    """Send a photon through the parity sorter.

    The superposition collapses onto one parity branch (Born weights),
    then the branch exits the matching port with probability
    (1 + V)/2 and the wrong port otherwise.  Returns (port, collapsed
    state); the state keeps its modes even when misrouted, the port is
    where it physically went.
    """
    w_even = photon.parity_weight("even")
    branch = "even" if rng.random() < w_even else "odd"
    collapsed = photon.restricted_to_parity(branch)
    if rng.random() < sorter.correct_port_prob(branch):
        port = branch
    else:
        port = "odd" if branch == "even" else "even"
    return port, collapsed


# Detector slot layout per analyzer.  Sorted receiver, circular
# analysis: (port, pol-sign) -> psi index; diagonal analysis -> xi
# index.  Interferometric receiver: slot = basis index directly.
SORTED_LR_SLOTS = {("even", "R"): 0, ("even", "L"): 1, ("odd", "R"): 2, ("odd", "L"): 3}
SORTED_DA_SLOTS = {("even", "D"): 0, ("even", "A"): 1, ("odd", "D"): 2, ("odd", "A"): 3}


def _branch_pol_probs(collapsed: PhotonState, analyzer: str) -> dict[str, float]:
    """Polarization analysis behind a sorter port.

    An inverse plate first undoes the charge conditioned on
    polarization, erasing mode information, so diagonal analysis sees
    interference between the +|l| and -|l| components.
    """
    a_pos = 0j  # R component, positive mode
    a_neg = 0j  # L component, negative mode
    for (mode, pol), amp in collapsed.items():
        if mode == 0:
            raise DomainError("cannot pol-analyze the Gaussian marker here")
        if mode > 0 and pol == "R":
            a_pos += amp
        elif mode < 0 and pol == "L":
            a_neg += amp
        else:
            raise DomainError(
                f"component ({mode}, {pol}) violates the antialignment rule"
            )
    if analyzer == "LR":
        return {"R": abs(a_pos) ** 2, "L": abs(a_neg) ** 2}
    if analyzer == "DA":
        d = abs(a_pos + a_neg) ** 2 / 2.0
        a = abs(a_pos - a_neg) ** 2 / 2.0
        return {"D": d, "A": a}
    raise DomainError(f"unknown analyzer {analyzer!r}")


def measure_sorted(
    photon: PhotonState,
    sorter: ModeSorterSpec,
    analyzer: str,
    rng: np.random.Generator,
) -> int:
    """Full sorted-receiver chain: sorter, port, polarization analysis.

    Returns the detector slot 0..3.  Insertion loss and detector
    efficiency are applied elsewhere; conditioned on detection this is
    the outcome distribution.
    """
    port, collapsed = sort_parity(photon, sorter, rng)
    probs = _branch_pol_probs(collapsed, analyzer)
    labels = list(probs)
    weights = np.array([probs[k] for k in labels])
    total = weights.sum()
    if total <= 0:
        raise DomainError("polarization analysis got an empty state")
    pick = labels[int(rng.choice(len(labels), p=weights / total))]
    slots = SORTED_LR_SLOTS if analyzer == "LR" else SORTED_DA_SLOTS
    return slots[(port, pick)]


def measure_interferometric(
    photon: PhotonState,
    sorter: ModeSorterSpec,
    set_label: str,
    mz_phase_offset_rad: float,
    rng: np.random.Generator,
) -> int:
    """Cross-family receiver chain: recombined ports, projection onto a set.

    With probability equal to the sorter leakage the parities lose
    mutual coherence: the photon collapses onto one parity branch
    before projection, which randomizes the outcome inside the correct
    polarization pair.  Otherwise the projection is fully coherent.
    """
    if set_label not in ("varphi", "phi"):
        raise DomainError(f"interferometric receiver measures varphi or phi, not {set_label!r}")
    work = photon
    if mz_phase_offset_rad != 0.0:
        rot = cmath.exp(1j * mz_phase_offset_rad)
        work = PhotonState(
            {k: (a * rot if abs(k[0]) == 7 else a) for k, a in photon.items()},
            photon.time_offset_ns,
        )
    if rng.random() < incoherent_fraction(work, sorter):
        branch = "even" if rng.random() < work.parity_weight("even") else "odd"
        work = work.restricted_to_parity(branch)
    basis = [ideal_ket(lbl) for lbl in STATE_SETS[set_label]]
    ket = work.oam_marginal()
    probs = ket.probs_in_basis(basis)
    total = probs.sum()
    if total > 1.0 + 1e-9:
        raise DomainError("projection probabilities exceed 1")
    # Remainder leaves through the unused output and is lost; fold it
    # back in by renormalizing only when sampling conditioned on a click.
    return int(rng.choice(len(basis), p=probs / total))


def measure_receiver(
    photon: PhotonState,
    receiver: ReceiverSpec,
    basis: Sequence[ss.OamKet],
    rng: np.random.Generator,
) -> int | None:
    """Idealized projective measurement behind a lossy receiver.

    Applies the insertion loss, then projects the photon's OAM content
    onto the given basis states (with the receiver's static phase
    offset for the interferometric kind).  Returns the basis index, or
    None when the photon is lost or misses the basis support.
    """
    if rng.random() >= receiver.transmission:
        return None
    work = photon
    if receiver.kind == "interferometric" and receiver.mz_phase_offset_rad != 0.0:
        rot = cmath.exp(1j * receiver.mz_phase_offset_rad)
        work = PhotonState(
            {k: (a * rot if abs(k[0]) == 7 else a) for k, a in photon.items()},
            photon.time_offset_ns,
        )
    ket = work.oam_marginal()
    probs = ket.probs_in_basis(basis)
    total = float(probs.sum())
    if total > 1.0 + 1e-9:
        raise DomainError("projection probabilities exceed 1")
    u = rng.random()
    acc = 0.0
    for j, p in enumerate(probs):
        acc += p
        if u < acc:
            return j
    return None


def visibility(n_max: float, n_min: float) -> float:
    """Interference visibility (n_max - n_min)/(n_max + n_min)."""
    if n_max < 0 or n_min < 0:
        raise DomainError("counts cannot be negative")
    if n_max < n_min:
        raise DomainError("n_max smaller than n_min")
    if n_max + n_min == 0:
        raise DomainError("both counts are zero")
    return (n_max - n_min) / (n_max + n_min)
