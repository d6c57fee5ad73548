"""Pulse-level simulation of the full link.

The engine never walks a photon element by element while simulating
billions of pulses.  Instead, for every (prepared state, measurement
configuration) pair it composes the per-photon click distribution in
closed form from the element models: the phase-averaged preparation
density matrix, the crosstalk channel in its density form, the sorter
routing/decoherence weights, the receiver projections, insertion loss
and detector efficiency.  Pulses are then drawn in vectorized blocks
against those distributions, with Poisson photon numbers, dark counts
and multi-click bookkeeping handled at the pulse level.

The element-by-element sampling chain lives in optics/channel and stays
the reference implementation: a cross-validation test drives photons
through it one at a time and checks the composed distributions match.

Phase jitters average exactly: a Gaussian phase of width sigma on a
subset of modes damps every affected coherence by exp(-sigma^2/2), so
the per-pulse inner loop never needs to draw phases.

Determinism: the pulse stream is split into fixed-size blocks, each
block consuming one child of numpy's SeedSequence spawned from the run
seed.  Worker processes only partition blocks, so results are
bit-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import channel as ch
from . import optics as op
from . import statespace as ss
from .decoy import DecoyIntensities
from .exceptions import DomainError, InvariantError
from .scenario import PROTOCOL_KEYS, Scenario, scenario_hash

#: Pulses per random block; fixed so the stream layout never depends on
#: worker count or windowing.
BLOCK_PULSES = 1 << 18

_MODES = ss.MODE_ORDER  # (-7, -6, 6, 7)
_IDX = {m: i for i, m in enumerate(_MODES)}
_EVEN_IDX = (_IDX[-6], _IDX[6])
_ODD_IDX = (_IDX[-7], _IDX[7])

#: Alice's preparation labels per dimension key and basis.  The list
#: position is the symbol index.  The 4D check basis sends only three
#: of the four states, uniformly.
PREPS: dict[str, dict[str, tuple[str, ...]]] = {
    "2D": {"Z": ("psi2", "psi4"), "X": ("varphi3", "varphi4")},
    "4D": {"Z": ("psi1", "psi2", "psi3", "psi4"), "X": ("phi1", "phi2", "phi3")},
    "MUX6": {"Z": ("psi1", "psi2"), "X": ("xi1", "xi2")},
    "MUX7": {"Z": ("psi3", "psi4"), "X": ("xi3", "xi4")},
}

#: Detector slot -> symbol index for each (dimension key, basis).
SYMBOL_SLOTS: dict[tuple[str, str], dict[int, int]] = {
    ("2D", "Z"): {1: 0, 3: 1},
    ("2D", "X"): {2: 0, 3: 1},
    ("4D", "Z"): {0: 0, 1: 1, 2: 2, 3: 3},
    ("4D", "X"): {0: 0, 1: 1, 2: 2, 3: 3},
    ("MUX6", "Z"): {0: 0, 1: 1},
    ("MUX6", "X"): {0: 0, 1: 1},
    ("MUX7", "Z"): {2: 0, 3: 1},
    ("MUX7", "X"): {2: 0, 3: 1},
}

#: Dimension of each key.
KEY_DIM: dict[str, int] = {"2D": 2, "4D": 4, "MUX6": 2, "MUX7": 2}

#: Characterization sets measured by their own analyzer, slots =
#: outcome indices directly.
SET_KEYS = ("psi", "xi", "varphi", "phi")


# ------------------------------------------------------------------
# Closed-form click distributions
# ------------------------------------------------------------------

def _damped_density(label: str, pol_sigma: float, arm_sigma: float,
                    arm_offset: float = 0.0) -> np.ndarray:
    """Phase-averaged density matrix of one prepared state.

    Gaussian jitter of width s on a mode subset multiplies each
    affected coherence by exp(-s^2/2); a static offset rotates it.
    The polarization phase lands on negative modes, the arm phase on
    the |l| = 7 family.
    """
    ket = op.ideal_ket(label)
    v = ket.vector()
    rho = np.outer(v, v.conj())
    g_pol = np.array([1.0 if m < 0 else 0.0 for m in _MODES])
    g_arm = np.array([1.0 if abs(m) == 7 else 0.0 for m in _MODES])
    for g, sigma in ((g_pol, pol_sigma), (g_arm, arm_sigma)):
        if sigma > 0.0:
            dg = g[:, None] - g[None, :]
            rho = rho * np.exp(-0.5 * sigma**2 * dg**2)
    if arm_offset != 0.0:
        dg = g_arm[:, None] - g_arm[None, :]
        rho = rho * np.exp(1j * arm_offset * dg)
    return rho


def _prep_density(label: str, sc: Scenario, arm_offset: float = 0.0) -> np.ndarray:
    """Preparation density including the flip-error mixture."""
    arm_sigma = sc.prep.arm_phase_sigma_rad
    pol_sigma = sc.prep.pol_phase_sigma_rad
    rho = _damped_density(label, pol_sigma, arm_sigma, arm_offset)
    beta = sc.prep.pol_flip_prob
    if beta > 0.0:
        partner = op.FLIP_PARTNER[label]
        rho = (1.0 - beta) * rho + beta * _damped_density(
            partner, pol_sigma, arm_sigma, arm_offset
        )
    return rho


def _branch_pair(rho: np.ndarray, idx_pair: tuple[int, int],
                 analyzer: str) -> tuple[float, float]:
    """Unnormalized (first-slot, second-slot) weights of one parity branch.

    Slot order is (R, L) for circular analysis and (D, A) for diagonal.
    idx_pair = (negative-mode index, positive-mode index).
    """
    i_neg, i_pos = idx_pair
    p_pos = float(np.real(rho[i_pos, i_pos]))
    p_neg = float(np.real(rho[i_neg, i_neg]))
    if analyzer == "LR":
        return p_pos, p_neg
    if analyzer == "DA":
        coh = float(np.real(rho[i_pos, i_neg]))
        half = 0.5 * (p_pos + p_neg)
        return half + coh, half - coh
    raise DomainError(f"unknown analyzer {analyzer!r}")


def _sorted_slot_probs(rho: np.ndarray, sorter: op.ModeSorterSpec,
                       analyzer_even: str, analyzer_odd: str) -> np.ndarray:
    """Slot probabilities of the sorted receiver, conditioned on arrival.

    Each parity branch goes out the right port with (1+V)/2, the wrong
    one otherwise; the analyzer behind the landing port measures the
    branch's polarization content.
    """
    even = _branch_pair(rho, _EVEN_IDX, analyzer_even)
    odd_at_even = _branch_pair(rho, _ODD_IDX, analyzer_even)
    odd = _branch_pair(rho, _ODD_IDX, analyzer_odd)
    even_at_odd = _branch_pair(rho, _EVEN_IDX, analyzer_odd)
    r_e = sorter.correct_port_prob("even")
    r_o = sorter.correct_port_prob("odd")
    m_e, m_o = 1.0 - r_e, 1.0 - r_o
    return np.array(
        [
            even[0] * r_e + odd_at_even[0] * m_o,
            even[1] * r_e + odd_at_even[1] * m_o,
            odd[0] * r_o + even_at_odd[0] * m_e,
            odd[1] * r_o + even_at_odd[1] * m_e,
        ]
    )


def _interf_slot_probs(rho: np.ndarray, sorter: op.ModeSorterSpec,
                       set_label: str) -> np.ndarray:
    """Slot probabilities of the interferometric receiver.

    Coherent projection onto the set, except that with the sorter's
    leakage probability the two parities decohere and each branch is
    projected on its own.
    """
    basis = np.array(
        [op.ideal_ket(lbl).vector() for lbl in op.STATE_SETS[set_label]]
    )
    w_even = float(np.real(rho[_EVEN_IDX[0], _EVEN_IDX[0]] + rho[_EVEN_IDX[1], _EVEN_IDX[1]]))
    w_odd = float(np.real(np.trace(rho))) - w_even
    iota = 0.5 * (1 - sorter.visibility_even) * w_even + 0.5 * (
        1 - sorter.visibility_odd
    ) * w_odd
    p_coh = np.real(np.einsum("ji,ik,jk->j", basis.conj(), rho, basis))
    mask_even = np.zeros((4, 4))
    for i in _EVEN_IDX:
        mask_even[i, i] = 1.0
    mask_odd = np.eye(4) - mask_even
    rho_collapsed = mask_even @ rho @ mask_even + mask_odd @ rho @ mask_odd
    p_inc = np.real(np.einsum("ji,ik,jk->j", basis.conj(), rho_collapsed, basis))
    return (1.0 - iota) * p_coh + iota * p_inc


def _apply_misalignment(slots: np.ndarray, symbol_map: Mapping[int, int],
                        e_mis: float) -> np.ndarray:
    """Mix click probability among a key's symbol detectors."""
    if e_mis <= 0.0:
        return slots
    out = slots.copy()
    sym = sorted(symbol_map)
    d = len(sym)
    if d < 2:
        return slots
    total = sum(slots[s] for s in sym)
    for s in sym:
        out[s] = (1.0 - e_mis) * slots[s] + e_mis * (total - slots[s]) / (d - 1)
    return out


def _mux_crosskey_matrix(er_db: float) -> np.ndarray:
    """Extra cross-family leakage present only in multiplexed operation."""
    x = 10.0 ** (-er_db / 10.0)
    m = np.zeros((4, 4))
    for i, src in enumerate(_MODES):
        for j, dst in enumerate(_MODES):
            if abs(src) != abs(dst):
                m[i, j] = x / (1.0 + 2.0 * x)
        m[i, i] = 1.0 / (1.0 + 2.0 * x)
    return m


def _channel_matrix(sc: Scenario, mux_joint: bool) -> ch.CrosstalkMatrix:
    cm = ch.crosstalk_matrix(sc.fiber)
    if mux_joint and sc.prep.mux_crosskey_er_db is not None:
        extra = _mux_crosskey_matrix(sc.prep.mux_crosskey_er_db)
        return ch.CrosstalkMatrix(cm.modes, cm.m @ extra)
    return cm


@dataclass(frozen=True)
class MeasurementConfig:
    """How Bob's receiver is arranged for one basis choice."""

    receiver: str  # "sorted" | "interf"
    analyzer_even: str = "LR"
    analyzer_odd: str = "LR"
    set_label: str = ""  # interferometric projection set


def _measurement_for(key: str, basis: str) -> MeasurementConfig:
    if key in ("2D", "4D"):
        if basis == "Z":
            return MeasurementConfig("sorted", "LR", "LR")
        return MeasurementConfig(
            "interf", set_label="varphi" if key == "2D" else "phi"
        )
    # Multiplexed keys analyze at their own port; alone, both ports get
    # the same analyzer setting.
    an = "LR" if basis == "Z" else "DA"
    return MeasurementConfig("sorted", an, an)


def click_distribution(
    sc: Scenario,
    prep_label: str,
    meas: MeasurementConfig,
    symbol_map: Mapping[int, int] | None = None,
    mux_joint: bool = False,
) -> np.ndarray:
    """Per-photon outcome distribution [slot0..slot3, no-click].

    Conditioned on the photon entering the fiber; includes fiber loss,
    crosstalk, receiver optics, insertion loss and detector efficiency.
    """
    if meas.receiver == "interf":
        arm_offset = sc.receiver_interf.mz_phase_offset_rad
        t_recv = sc.receiver_interf.transmission
    else:
        arm_offset = 0.0
        t_recv = sc.receiver_sorted.transmission
    rho = _prep_density(prep_label, sc, arm_offset)
    cm = _channel_matrix(sc, mux_joint)
    rho = cm.apply_to_density(rho)
    if meas.receiver == "interf":
        slots = _interf_slot_probs(rho, sc.sorter, meas.set_label)
    else:
        slots = _sorted_slot_probs(rho, sc.sorter, meas.analyzer_even, meas.analyzer_odd)
    if symbol_map and sc.prep.misalignment > 0.0:
        slots = _apply_misalignment(slots, symbol_map, sc.prep.misalignment)
    scale = ch.survival(sc.fiber) * t_recv * sc.detector.efficiency
    slots = slots * scale
    total = float(slots.sum())
    if total > 1.0 + 1e-9:
        raise InvariantError(f"click probabilities sum to {total}")
    return np.append(slots, max(1.0 - total, 0.0))


# ------------------------------------------------------------------
# Tallies
# ------------------------------------------------------------------

OUTCOME_NONE = "none"
OUTCOME_MULTI = "multi"
_INTENSITY_ORDER = ("mu", "nu", "omega")


@dataclass
class TallyCounts:
    """Event counts of one key, exact and mergeable.

    Keys are (intensity, alice_basis, state_index, bob_basis, outcome)
    with outcome a symbol index, "none", or "multi".  Counts over all
    keys sum to the number of pulses, which merge() and the engine keep
    as a checked invariant.
    """

    key: str
    dim: int
    intensities: DecoyIntensities
    n_pulses: int = 0
    counts: dict = field(default_factory=dict)

    def add(self, k: tuple, n: int) -> None:
        if n:
            self.counts[k] = self.counts.get(k, 0) + int(n)

    def merge(self, other: "TallyCounts") -> "TallyCounts":
        if (self.key, self.dim) != (other.key, other.dim):
            raise DomainError("cannot merge tallies of different keys")
        out = TallyCounts(self.key, self.dim, self.intensities,
                          self.n_pulses + other.n_pulses, dict(self.counts))
        for k, n in other.counts.items():
            out.counts[k] = out.counts.get(k, 0) + n
        return out

    def check_conservation(self) -> None:
        total = sum(self.counts.values())
        if total != self.n_pulses:
            raise InvariantError(
                f"tally holds {total} events for {self.n_pulses} pulses"
            )

    def iter_rows(self):
        for k in sorted(self.counts, key=lambda t: tuple(str(x) for x in t)):
            yield k, self.counts[k]

    def sifted_stats(self, basis: str) -> dict[str, tuple[int, int, int, int]]:
        """Per intensity: (pulses, conclusive, multi, errors) with both
        bases equal to `basis`."""
        out = {}
        for intensity in _INTENSITY_ORDER:
            pulses = conclusive = multi = errors = 0
            for (ik, ab, state, bb, outcome), n in self.counts.items():
                if ik != intensity or ab != basis or bb != basis:
                    continue
                pulses += n
                if outcome == OUTCOME_MULTI:
                    multi += n
                elif outcome != OUTCOME_NONE:
                    conclusive += n
                    if outcome != state:
                        errors += n
            out[intensity] = (pulses, conclusive, multi, errors)
        return out

    def qber(self, basis: str, intensity: str = "mu") -> float:
        stats = self.sifted_stats(basis)[intensity]
        _, conclusive, _, errors = stats
        if conclusive == 0:
            raise DomainError(
                f"no conclusive sifted clicks in basis {basis} at {intensity}"
            )
        return errors / conclusive

    def conclusive_clicks(self, basis: str, intensity: str = "mu") -> int:
        return self.sifted_stats(basis)[intensity][1]


# ------------------------------------------------------------------
# Engine internals
# ------------------------------------------------------------------

_POPCNT = np.array([bin(i).count("1") for i in range(16)], dtype=np.int64)
_SLOT_OF_MASK = np.full(16, -1, dtype=np.int64)
for _s in range(4):
    _SLOT_OF_MASK[1 << _s] = _s


def _intensity_cum(it: DecoyIntensities) -> tuple[np.ndarray, np.ndarray]:
    probs = np.array([it.p_mu, it.p_nu, it.p_omega])
    alphas = np.array([it.mu, it.nu, it.omega])
    return np.cumsum(probs), alphas


def _sample_outcomes(cum_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized per-row inverse CDF over 5 outcomes."""
    return (u[:, None] >= cum_rows[:, :4]).sum(axis=1)


def _dark_mask(rng: np.random.Generator, n: int, dark: float) -> np.ndarray:
    mask = np.zeros(n, dtype=np.uint8)
    if dark <= 0.0:
        return mask
    k = rng.binomial(4 * n, dark)
    if k:
        pos = rng.integers(0, 4 * n, size=k)
        np.bitwise_or.at(mask, pos // 4, (1 << (pos % 4)).astype(np.uint8))
    return mask


def _classify(slot_mask: np.ndarray, sym_mask_per_basis: np.ndarray,
              b_basis: np.ndarray, slot2sym: np.ndarray, dim: int) -> np.ndarray:
    """Outcome code per pulse: 0..dim-1 symbols, dim none, dim+1 multi."""
    sym_bits = slot_mask & sym_mask_per_basis[b_basis]
    hits = _POPCNT[sym_bits]
    out = np.full(slot_mask.shape, dim, dtype=np.int64)
    out[hits >= 2] = dim + 1
    single = hits == 1
    slots = _SLOT_OF_MASK[sym_bits[single]]
    out[single] = slot2sym[b_basis[single], slots]
    return out


@dataclass(frozen=True)
class _KeyTables:
    """Precomputed sampling tables for one key."""

    key: str
    dim: int
    n_states: np.ndarray  # per basis index (0=Z, 1=X)
    cum: np.ndarray  # [n_prep_rows, 5] cumulative outcome dists
    row_of: np.ndarray  # [2, max_states] -> row in cum
    sym_mask: np.ndarray  # [2] uint8 bitmask of symbol slots
    slot2sym: np.ndarray  # [2, 4] slot -> symbol (-1 outside)


def _build_key_tables(sc: Scenario, key: str, mux_joint: bool,
                      other_basis: str | None = None) -> _KeyTables:
    """Tables for one key.  For multiplexed joint runs the measurement
    depends on both keys' bases, so other_basis picks the co-key's
    analyzer; tables are then built per (self basis, other basis)."""
    dists = []
    row_of = np.full((2, 4), -1, dtype=np.int64)
    n_states = np.zeros(2, dtype=np.int64)
    sym_mask = np.zeros(2, dtype=np.uint8)
    slot2sym = np.full((2, 4), -1, dtype=np.int64)
    for bi, basis in enumerate(("Z", "X")):
        preps = PREPS[key][basis]
        n_states[bi] = len(preps)
        symbols = SYMBOL_SLOTS[(key, basis)]
        for slot, idx in symbols.items():
            sym_mask[bi] |= np.uint8(1 << slot)
            slot2sym[bi, slot] = idx
        meas = _measurement_for(key, basis)
        if mux_joint and other_basis is not None:
            meas = _mux_joint_measurement(key, basis, other_basis)
        for si, label in enumerate(preps):
            dist = click_distribution(sc, label, meas, symbols, mux_joint)
            row_of[bi, si] = len(dists)
            dists.append(np.cumsum(dist))
    return _KeyTables(
        key=key,
        dim=KEY_DIM[key],
        n_states=n_states,
        cum=np.array(dists),
        row_of=row_of,
        sym_mask=sym_mask,
        slot2sym=slot2sym,
    )


def _mux_joint_measurement(key: str, basis: str, other_basis: str) -> MeasurementConfig:
    an_self = "LR" if basis == "Z" else "DA"
    an_other = "LR" if other_basis == "Z" else "DA"
    if key == "MUX6":
        return MeasurementConfig("sorted", an_self, an_other)
    return MeasurementConfig("sorted", an_other, an_self)


# ------------------------------------------------------------------
# Block runners
# ------------------------------------------------------------------

def _empty_tallies(sc: Scenario, key: str) -> TallyCounts:
    return TallyCounts(key, KEY_DIM[key], sc.source.intensities)


def _tally_from_codes(tally: TallyCounts, codes: np.ndarray, dim: int) -> None:
    """Unpack packed event codes into the tally dictionary."""
    n_out = dim + 2
    width_state = 4
    counts = np.bincount(codes, minlength=3 * 2 * width_state * 2 * n_out)
    nz = np.nonzero(counts)[0]
    for code in nz:
        n = int(counts[code])
        out_i = code % n_out
        rest = code // n_out
        bb = rest % 2
        rest //= 2
        state = rest % width_state
        rest //= width_state
        ab = rest % 2
        ik = rest // 2
        outcome: object
        if out_i == dim:
            outcome = OUTCOME_NONE
        elif out_i == dim + 1:
            outcome = OUTCOME_MULTI
        else:
            outcome = int(out_i)
        tally.add(
            (
                _INTENSITY_ORDER[ik],
                "Z" if ab == 0 else "X",
                int(state),
                "Z" if bb == 0 else "X",
                outcome,
            ),
            n,
        )
    tally.n_pulses += int(codes.size)


def _pack_codes(ik, ab, state, bb, outcome, n_out) -> np.ndarray:
    return (((ik * 2 + ab) * 4 + state) * 2 + bb) * n_out + outcome


def _photon_slot_mask(rng, n, cum, rows, n_photons) -> np.ndarray:
    """OR together the slot hits of every photon of every pulse."""
    mask = np.zeros(n, dtype=np.uint8)
    total = int(n_photons.sum())
    if total == 0:
        return mask
    pulse_idx = np.repeat(np.arange(n), n_photons)
    u = rng.random(total)
    out = _sample_outcomes(cum[rows[pulse_idx]], u)
    hit = out < 4
    np.bitwise_or.at(
        mask, pulse_idx[hit], (1 << out[hit]).astype(np.uint8)
    )
    return mask


def _run_block_single(sc: Scenario, tables: _KeyTables, n: int,
                      seed: np.random.SeedSequence,
                      tally: TallyCounts) -> None:
    rng = np.random.Generator(np.random.PCG64(seed))
    cum_p, alphas = _intensity_cum(sc.source.intensities)
    p_z = sc.source.basis_probs[0]
    ik = np.searchsorted(cum_p, rng.random(n), side="right").astype(np.int64)
    ik[ik > 2] = 2
    ab = (rng.random(n) >= p_z).astype(np.int64)
    state = np.floor(rng.random(n) * tables.n_states[ab]).astype(np.int64)
    bb = (rng.random(n) >= p_z).astype(np.int64)
    n_phot = rng.poisson(alphas[ik])
    rows = tables.row_of[ab, state]
    mask = _photon_slot_mask(rng, n, tables.cum, rows, n_phot)
    mask |= _dark_mask(rng, n, sc.detector.dark_prob_per_gate)
    outcome = _classify(mask, tables.sym_mask, bb, tables.slot2sym, tables.dim)
    codes = _pack_codes(ik, ab, state, bb, outcome, tables.dim + 2)
    _tally_from_codes(tally, codes, tables.dim)


def _run_block_mux(sc: Scenario, tables6, tables7, n: int,
                   seed: np.random.SeedSequence,
                   tally6: TallyCounts, tally7: TallyCounts) -> None:
    """One block of joint multiplexed operation.

    One intensity setting per pulse; each key draws its own basis,
    state, and photon number.  Slot clicks from both keys land on the
    shared detector array before per-key classification.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    cum_p, alphas = _intensity_cum(sc.source.intensities)
    p_z = sc.source.basis_probs[0]
    ik = np.searchsorted(cum_p, rng.random(n), side="right").astype(np.int64)
    ik[ik > 2] = 2
    per_key = {}
    for key in ("MUX6", "MUX7"):
        ab = (rng.random(n) >= p_z).astype(np.int64)
        bb = (rng.random(n) >= p_z).astype(np.int64)
        per_key[key] = (ab, bb)
    mask = np.zeros(n, dtype=np.uint8)
    states = {}
    for key, tables in (("MUX6", tables6), ("MUX7", tables7)):
        ab, bb = per_key[key]
        other_bb = per_key["MUX7" if key == "MUX6" else "MUX6"][1]
        state = np.floor(rng.random(n) * tables.n_states[ab]).astype(np.int64)
        states[key] = state
        n_phot = rng.poisson(alphas[ik])
        # Tables are stacked per other-basis: row block 0 for other=Z.
        rows = tables.row_of[ab, state] + other_bb * tables.cum.shape[0] // 2
        cum = tables.cum
        mask |= _photon_slot_mask(rng, n, cum, rows, n_phot)
    mask |= _dark_mask(rng, n, sc.detector.dark_prob_per_gate)
    for key, tables, tally in (("MUX6", tables6, tally6), ("MUX7", tables7, tally7)):
        ab, bb = per_key[key]
        outcome = _classify(mask, tables.sym_mask, bb, tables.slot2sym, tables.dim)
        codes = _pack_codes(ik, ab, states[key], bb, outcome, tables.dim + 2)
        _tally_from_codes(tally, codes, tables.dim)


def _build_mux_tables(sc: Scenario, key: str) -> _KeyTables:
    """Stacked tables for a key in joint operation: rows for the other
    key's basis Z first, then X."""
    t_z = _build_key_tables(sc, key, mux_joint=True, other_basis="Z")
    t_x = _build_key_tables(sc, key, mux_joint=True, other_basis="X")
    cum = np.vstack([t_z.cum, t_x.cum])
    return _KeyTables(
        key=key,
        dim=t_z.dim,
        n_states=t_z.n_states,
        cum=cum,
        row_of=t_z.row_of,
        sym_mask=t_z.sym_mask,
        slot2sym=t_z.slot2sym,
    )


# ------------------------------------------------------------------
# Public entry points
# ------------------------------------------------------------------

@dataclass
class RunResult:
    """Tallies of one simulated run, per key."""

    protocol: str
    tallies: dict[str, TallyCounts]
    windowed: dict[str, list[TallyCounts]] | None
    pulses: int
    seed: int
    scenario_digest: str


def _block_spans(pulses: int, window: int | None) -> list[tuple[int, int]]:
    """(start, size) spans: fixed BLOCK_PULSES grid, further split at
    window boundaries so each span maps to one window."""
    spans = []
    start = 0
    while start < pulses:
        end = min(start + BLOCK_PULSES, pulses)
        if window:
            # split the block at window boundaries
            s = start
            while s < end:
                nxt = min(((s // window) + 1) * window, end)
                spans.append((s, nxt - s))
                s = nxt
        else:
            spans.append((start, end - start))
        start = end
    return spans


def _seed_for_span(root: np.random.SeedSequence, span_start: int) -> np.random.SeedSequence:
    """Independent stream per span, derived from absolute position so
    windowing choices do not change the dark/photon draws pattern at
    block granularity."""
    return np.random.SeedSequence(
        entropy=root.entropy, spawn_key=(span_start,)
    )


def _run_spans(sc: Scenario, spans: Sequence[tuple[int, int]], seed: int,
               mux: bool, tables) -> dict[str, TallyCounts]:
    root = np.random.SeedSequence(seed)
    if mux:
        tallies = {
            "MUX6": _empty_tallies(sc, "MUX6"),
            "MUX7": _empty_tallies(sc, "MUX7"),
        }
        for start, size in spans:
            _run_block_mux(
                sc, tables["MUX6"], tables["MUX7"], size,
                _seed_for_span(root, start), tallies["MUX6"], tallies["MUX7"],
            )
    else:
        key = sc.dim_labels[0]
        tallies = {key: _empty_tallies(sc, key)}
        for start, size in spans:
            _run_block_single(
                sc, tables[key], size, _seed_for_span(root, start), tallies[key]
            )
    return tallies


def _worker_run(args) -> dict[str, TallyCounts]:
    sc, spans, seed, mux = args
    tables = _make_tables(sc, mux)
    return _run_spans(sc, spans, seed, mux, tables)


def _make_tables(sc: Scenario, mux: bool):
    if mux:
        return {
            "MUX6": _build_mux_tables(sc, "MUX6"),
            "MUX7": _build_mux_tables(sc, "MUX7"),
        }
    key = sc.dim_labels[0]
    return {key: _build_key_tables(sc, key, mux_joint=False)}


def run_protocol(sc: Scenario, pulses: int | None = None,
                 seed: int | None = None, workers: int | None = None,
                 windows: bool = False) -> RunResult:
    """Simulate the scenario's protocol and return exact tallies.

    pulses/seed/workers default to the scenario's run section.  With
    windows=True, per-window tallies (run.window_pulses each) are kept
    alongside the totals for stability traces.
    """
    pulses = int(pulses if pulses is not None else sc.run.pulses)
    seed = int(seed if seed is not None else sc.run.seed)
    workers = int(workers if workers is not None else sc.run.workers)
    if pulses < 1:
        raise DomainError("need at least one pulse")
    if windows and workers > 1:
        raise DomainError("windowed runs require workers=1")
    mux = sc.protocol == "MUX"
    window = sc.run.window_pulses if windows else None
    spans = _block_spans(pulses, window)
    if workers > 1 and len(spans) > 1:
        chunks: list[list[tuple[int, int]]] = [[] for _ in range(workers)]
        for i, span in enumerate(spans):
            chunks[i % workers].append(span)
        args = [(sc, chunk, seed, mux) for chunk in chunks if chunk]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(_worker_run, args))
        merged: dict[str, TallyCounts] = {}
        for part in partials:
            for k, t in part.items():
                merged[k] = merged[k].merge(t) if k in merged else t
        span_tallies = None
        tallies = merged
    else:
        tables = _make_tables(sc, mux)
        if window:
            # run span by span, keeping per-window partials
            span_tallies = {}
            tallies = {}
            for start, size in spans:
                part = _run_spans(sc, [(start, size)], seed, mux, tables)
                wid = start // window
                for k, t in part.items():
                    tallies[k] = tallies[k].merge(t) if k in tallies else t
                    span_tallies.setdefault(k, {})
                    if wid in span_tallies[k]:
                        span_tallies[k][wid] = span_tallies[k][wid].merge(t)
                    else:
                        span_tallies[k][wid] = t
        else:
            tallies = _run_spans(sc, spans, seed, mux, tables)
            span_tallies = None
    windowed = None
    if windows and span_tallies is not None:
        windowed = {
            k: [span_tallies[k][w] for w in sorted(span_tallies[k])]
            for k in span_tallies
        }
    for t in tallies.values():
        t.check_conservation()
    return RunResult(
        protocol=sc.protocol,
        tallies=tallies,
        windowed=windowed,
        pulses=pulses,
        seed=seed,
        scenario_digest=scenario_hash(sc),
    )


def qber_series(result: RunResult, basis: str = "Z",
                intensity: str = "mu") -> dict[str, list[tuple[int, int, float, int]]]:
    """Windowed error-rate trace from a windows=True run.

    Per key: (window index, pulses, qber, conclusive clicks); windows
    without conclusive sifted clicks report NaN.
    """
    if result.windowed is None:
        raise DomainError("run_protocol(..., windows=True) output required")
    out: dict[str, list[tuple[int, int, float, int]]] = {}
    for key, windows in result.windowed.items():
        rows = []
        for wi, tally in enumerate(windows):
            stats = tally.sifted_stats(basis)[intensity]
            _, conclusive, _, errors = stats
            q = errors / conclusive if conclusive else float("nan")
            rows.append((wi, tally.n_pulses, q, conclusive))
        out[key] = rows
    return out


# ------------------------------------------------------------------
# Fixed-preparation runs and detection matrices
# ------------------------------------------------------------------

def _run_fixed(sc: Scenario, dist: np.ndarray, sym_map: Mapping[int, int],
               dim: int, pulses: int,
               seed: np.random.SeedSequence) -> tuple[np.ndarray, int, int]:
    """Drive one photon per pulse through a fixed preparation and
    measurement; characterization statistics, not key exchange.  The
    conditional outcome distribution does not depend on the photon
    number, so single photons stand in for the bright characterization
    light.  Returns (per-symbol conclusive counts, none, multi)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    cum = np.cumsum(dist)[None, :]
    sym_mask = np.uint8(0)
    slot2sym = np.full((1, 4), -1, dtype=np.int64)
    for slot, idx in sym_map.items():
        sym_mask |= np.uint8(1 << slot)
        slot2sym[0, slot] = idx
    counts = np.zeros(dim, dtype=np.int64)
    none = multi = 0
    remaining = pulses
    while remaining > 0:
        n = min(remaining, BLOCK_PULSES)
        remaining -= n
        n_phot = np.ones(n, dtype=np.int64)
        rows = np.zeros(n, dtype=np.int64)
        mask = _photon_slot_mask(rng, n, cum, rows, n_phot)
        mask |= _dark_mask(rng, n, sc.detector.dark_prob_per_gate)
        outcome = _classify(
            mask, np.array([sym_mask]), np.zeros(n, dtype=np.int64), slot2sym, dim
        )
        binned = np.bincount(outcome, minlength=dim + 2)
        counts += binned[:dim]
        none += int(binned[dim])
        multi += int(binned[dim + 1])
    return counts, none, multi


@dataclass(frozen=True)
class DetectionMatrix:
    """Conditional outcome matrix of a characterization run.

    Rows are prepared states, columns outcomes, each row normalized
    over conclusive clicks.  fidelity is the row-averaged distribution
    fidelity against the ideal identity response, i.e. the mean of
    sqrt(diagonal); row_clicks the conclusive statistics behind each
    row.
    """

    target: str
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    m: np.ndarray
    row_clicks: tuple[int, ...]
    fidelity: float
    fidelity_sigma: float

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "row_labels": list(self.row_labels),
            "col_labels": list(self.col_labels),
            "matrix": [[float(x) for x in row] for row in self.m],
            "row_clicks": list(self.row_clicks),
            "fidelity": self.fidelity,
            "fidelity_sigma": self.fidelity_sigma,
        }


def _set_measurement(set_label: str) -> tuple[MeasurementConfig, dict[int, int]]:
    if set_label == "psi":
        return MeasurementConfig("sorted", "LR", "LR"), {i: i for i in range(4)}
    if set_label == "xi":
        return MeasurementConfig("sorted", "DA", "DA"), {i: i for i in range(4)}
    if set_label in ("varphi", "phi"):
        return MeasurementConfig("interf", set_label=set_label), {i: i for i in range(4)}
    raise DomainError(f"unknown characterization set {set_label!r}")


def detection_matrix(sc: Scenario, target: str, pulses_per_state: int,
                     seed: int | None = None) -> DetectionMatrix:
    """Measure a conditional detection matrix.

    target is a state family (psi, xi, varphi, phi: all four states
    against their own analyzer) or a protocol key (2D, 4D, MUX6, MUX7:
    each basis's states against the matched measurement, blocks on the
    diagonal).  Each prepared state gets pulses_per_state signal
    pulses.  Characterization runs one state at a time, so multiplexed
    keys see no cross-key load here.
    """
    seed = int(seed if seed is not None else sc.run.seed)
    root = np.random.SeedSequence(seed)
    rows = []
    row_labels: list[str] = []
    col_labels: list[str] = []
    row_clicks: list[int] = []
    if target in SET_KEYS:
        meas, sym_map = _set_measurement(target)
        labels = op.STATE_SETS[target]
        col_labels = list(labels)
        blocks = [(labels, meas, sym_map, 0, 4)]
        width = 4
    elif target in KEY_DIM:
        dim = KEY_DIM[target]
        width = 2 * dim
        blocks = []
        for bi, basis in enumerate(("Z", "X")):
            labels = PREPS[target][basis]
            if target == "4D" and basis == "X":
                # characterize the full set, not just the three sent
                labels = op.STATE_SETS["phi"]
            meas = _measurement_for(target, basis)
            sym_map = SYMBOL_SLOTS[(target, basis)]
            blocks.append((labels, meas, sym_map, bi * dim, dim))
            col_labels.extend(f"{basis}{i}" for i in range(dim))
    else:
        raise DomainError(f"unknown matrix target {target!r}")
    children = iter(root.spawn(16))
    row_fids = []
    var_fid = []
    for labels, meas, sym_map, col_off, dim in blocks:
        for si, label in enumerate(labels):
            dist = click_distribution(sc, label, meas, sym_map)
            counts, _, _ = _run_fixed(
                sc, dist, sym_map, dim, pulses_per_state, next(children)
            )
            total = int(counts.sum())
            if total == 0:
                raise DomainError(
                    f"no conclusive clicks for state {label}; increase pulses"
                )
            row = np.zeros(width)
            row[col_off:col_off + dim] = counts / total
            rows.append(row)
            row_labels.append(label)
            row_clicks.append(total)
            p_ii = counts[si] / total
            ideal = [1.0 if j == si else 0.0 for j in range(dim)]
            row_fids.append(ss.fidelity(counts / total, ideal))
            # delta method on F = sqrt(p_ii)
            if p_ii > 0:
                var_fid.append(p_ii * (1 - p_ii) / total / (4 * p_ii))
            else:
                var_fid.append(0.0)
    m = np.array(rows)
    fidelity = float(np.mean(row_fids))
    fidelity_sigma = float(np.sqrt(np.sum(var_fid)) / len(rows))
    return DetectionMatrix(
        target=target,
        row_labels=tuple(row_labels),
        col_labels=tuple(col_labels),
        m=m,
        row_clicks=tuple(row_clicks),
        fidelity=fidelity,
        fidelity_sigma=fidelity_sigma,
    )


# ------------------------------------------------------------------
# Exact single-photon reference values
# ------------------------------------------------------------------

@dataclass(frozen=True)
class SinglePhotonTruth:
    """Exact per-basis yields and error rates for one-photon pulses."""

    y1_z: float
    y1_x: float
    e1_z: float
    e1_x: float


def single_photon_truth(sc: Scenario, key: str) -> SinglePhotonTruth:
    """Enumerate the exact outcome law of a single-photon pulse.

    For each basis: one photon is sent through the composed click
    distribution, dark counts enumerated over all detector subsets,
    outcomes classified exactly as the engine does.  Yields follow the
    gain convention (conclusive plus multi); error rates condition on
    conclusive clicks.
    """
    d = sc.detector.dark_prob_per_gate
    out = {}
    for basis in ("Z", "X"):
        preps = PREPS[key][basis]
        meas = _measurement_for(key, basis)
        sym_map = SYMBOL_SLOTS[(key, basis)]
        p_click = p_concl = p_err = 0.0
        for si, label in enumerate(preps):
            dist = click_distribution(sc, label, meas, sym_map)
            for photon_out in range(5):
                p_photon = dist[photon_out]
                if p_photon == 0.0:
                    continue
                for dark_bits in range(16):
                    k = int(_POPCNT[dark_bits])
                    p_dark = (d**k) * ((1 - d) ** (4 - k))
                    if p_dark == 0.0:
                        continue
                    bits = dark_bits
                    if photon_out < 4:
                        bits |= 1 << photon_out
                    sym_bits = [s for s in sym_map if bits & (1 << s)]
                    p = p_photon * p_dark / len(preps)
                    if len(sym_bits) == 1:
                        p_click += p
                        p_concl += p
                        if sym_map[sym_bits[0]] != si:
                            p_err += p
                    elif len(sym_bits) >= 2:
                        p_click += p
        out[basis] = (p_click, p_err / p_concl if p_concl > 0 else float("nan"))
    return SinglePhotonTruth(
        y1_z=out["Z"][0], y1_x=out["X"][0], e1_z=out["Z"][1], e1_x=out["X"][1]
    )
