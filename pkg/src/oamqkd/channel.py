"""Fiber transmission: loss, intermodal crosstalk, group-delay walk-off.

The link is an air-core fiber that carries the four alphabet modes with
low mixing.  Three effects matter at the level of this model:

  * uniform attenuation, dB/km, mode independent;
  * weak incoherent scatter between modes, parameterized by the
    measured extinction ratio per |l| family and assumed to feed all
    other modes equally;
  * a group-delay difference between the |l| = 6 and |l| = 7 families,
    which the transmitter can pre-compensate.

Scatter is modeled as a flagged-Kraus channel.  With the "stay"
operator the photon keeps its full coherence (amplitudes reweighted by
the square roots of the diagonal survival probabilities); otherwise it
is reemitted as a single incoherent mode drawn from the source row of
the crosstalk matrix.  Both the pulse sampler and the closed-form
density-matrix map below implement exactly this channel, which is what
lets them be cross-checked against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import statespace as ss
from .exceptions import DomainError, ModeSetError
from .optics import PhotonState, photon_from_ket

#: Extinction ratio per |l| family, dB, as characterized on the link.
DEFAULT_ER_DB: dict[int, float] = {5: 17.8, 6: 18.4, 7: 18.7}

#: Group-delay walk-off between the |l|=6 and |l|=7 families.
DEFAULT_DELAY_NS_PER_KM = 12.5


@dataclass(frozen=True)
class FiberSpec:
    """Physical description of the fiber link."""

    length_km: float = 1.2
    loss_db_per_km: float = 1.0
    er_db: Mapping[int, float] = field(
        default_factory=lambda: dict(DEFAULT_ER_DB)
    )
    delay_ns_per_km: float = DEFAULT_DELAY_NS_PER_KM
    compensate_delay: bool = False
    #: Optional extra crosstalk of the launch/coupling stage, same
    #: extinction-ratio convention, applied before the fiber.  None
    #: disables it.
    coupling_er_db: float | None = None

    def __post_init__(self):
        if self.length_km < 0:
            raise DomainError("fiber length cannot be negative")
        if self.loss_db_per_km < 0:
            raise DomainError("fiber loss cannot be negative")
        for k, v in self.er_db.items():
            if v <= 0:
                raise DomainError(f"extinction ratio for |l|={k} must be positive")
        if self.delay_ns_per_km < 0:
            raise DomainError("delay walk-off cannot be negative")
        if self.coupling_er_db is not None and self.coupling_er_db <= 0:
            raise DomainError("coupling extinction ratio must be positive")

    def er_for(self, abs_mode: int) -> float:
        try:
            return float(self.er_db[abs_mode])
        except KeyError:
            raise DomainError(
                f"no extinction ratio on record for |l|={abs_mode}"
            ) from None


def survival(spec: FiberSpec) -> float:
    """Probability that a photon is not absorbed over the full length."""
    return 10.0 ** (-spec.length_km * spec.loss_db_per_km / 10.0)


def arrival_table(spec: FiberSpec) -> dict[int, float]:
    """Relative arrival time in ns per |l| family at the fiber output."""
    if spec.compensate_delay:
        return {6: 0.0, 7: 0.0}
    return {6: 0.0, 7: spec.delay_ns_per_km * spec.length_km}


@dataclass(frozen=True)
class CrosstalkMatrix:
    """Row-stochastic mode transition matrix in MODE_ORDER indexing."""

    modes: tuple[int, ...]
    m: np.ndarray

    def __post_init__(self):
        n = len(self.modes)
        if self.m.shape != (n, n):
            raise DomainError(f"matrix shape {self.m.shape} does not match {n} modes")
        if np.any(self.m < -1e-15) or np.any(self.m > 1 + 1e-12):
            raise DomainError("transition probabilities outside [0, 1]")
        rows = self.m.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-9):
            raise DomainError(f"rows must sum to 1, got {rows}")
        self.m.flags.writeable = False

    def index(self, mode: int) -> int:
        try:
            return self.modes.index(mode)
        except ValueError:
            raise ModeSetError(f"mode {mode} not covered by this matrix") from None

    def p(self, src: int, dst: int) -> float:
        return float(self.m[self.index(src), self.index(dst)])

    def stay_prob(self, weights: np.ndarray) -> float:
        """Probability of the coherence-preserving branch for mode weights."""
        return float(np.dot(weights, np.diag(self.m)))

    def apply_to_density(self, rho: np.ndarray) -> np.ndarray:
        """Closed-form action of the scatter channel on a density matrix.

        Off-diagonals shrink by sqrt(M_ii M_jj); populations mix by the
        full rows.  Trace is preserved exactly.
        """
        d = np.diag(self.m)
        damp = np.sqrt(np.outer(d, d))
        out = rho * damp
        pops = np.real(np.diag(rho))
        new_diag = pops * d + (pops @ self.m - pops * d)
        np.fill_diagonal(out, new_diag)
        return out


def _single_er_matrix(modes: tuple[int, ...], er_of) -> np.ndarray:
    n = len(modes)
    m = np.zeros((n, n))
    for i, src in enumerate(modes):
        x = 10.0 ** (-er_of(src) / 10.0)
        denom = 1.0 + (n - 1) * x
        m[i, :] = x / denom
        m[i, i] = 1.0 / denom
    return m


def crosstalk_matrix(
    spec: FiberSpec, modes: tuple[int, ...] = ss.MODE_ORDER
) -> CrosstalkMatrix:
    """Build the mode transition matrix from extinction ratios.

    An extinction ratio r gives a leaked fraction x = 10^(-r/10) into
    each of the other modes, with the diagonal renormalized so the row
    is a distribution.  With coupling_er_db set, a second stage of the
    same form acts before the fiber and the two compose.
    """
    m = _single_er_matrix(modes, lambda src: spec.er_for(abs(src)))
    if spec.coupling_er_db is not None:
        mc = _single_er_matrix(modes, lambda src: spec.coupling_er_db)
        m = mc @ m
    return CrosstalkMatrix(modes, m)


def transmit(
    photon: PhotonState,
    spec: FiberSpec,
    rng: np.random.Generator,
    matrix: CrosstalkMatrix | None = None,
) -> tuple[bool, PhotonState]:
    """Propagate one photon through the fiber.

    Returns (survived, state).  On absorption the input state is handed
    back untouched with survived False.  On survival the scatter
    channel acts: either the photon keeps its coherent mode content
    (reweighted by the stay amplitudes) or it exits as one incoherent
    mode with the antialigned polarization.  The arrival-time offset of
    the output state is updated from the walk-off table.
    """
    if 0 in photon.modes():
        raise ModeSetError("the fiber does not carry the Gaussian marker mode")
    if rng.random() >= survival(spec):
        return False, photon
    cm = matrix if matrix is not None else crosstalk_matrix(spec)
    ket = photon.oam_marginal()
    weights = np.array([ket.prob(m) for m in cm.modes])
    stay = cm.stay_prob(weights)
    if rng.random() < stay:
        diag = np.diag(cm.m)
        amps = {
            m: ket.amplitude(m) * math.sqrt(diag[i])
            for i, m in enumerate(cm.modes)
            if ket.amplitude(m) != 0
        }
        norm = math.sqrt(sum(abs(a) ** 2 for a in amps.values()))
        out_ket = ss.OamKet({m: a / norm for m, a in amps.items()})
    else:
        # Incoherent branch: joint pick of (source, destination) from
        # the off-diagonal mass, then a pure output mode.
        off = cm.m - np.diag(np.diag(cm.m))
        joint = weights[:, None] * off
        flat = joint.ravel()
        total = flat.sum()
        u = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(flat), u, side="right"))
        dst = cm.modes[idx % len(cm.modes)]
        out_ket = ss.ket(dst)
    arrivals = arrival_table(spec)
    offset = sum(
        out_ket.prob(m) * arrivals[abs(m)] for m in out_ket.modes
    )
    out = photon_from_ket(out_ket, photon.time_offset_ns + offset)
    return True, out
