"""Generic Cell Rate Algorithm: conformance checking and UPC tagging.

Uses the virtual-scheduling formulation (a theoretical arrival time TAT
advanced by one increment per conforming cell). It is exactly equivalent
to the continuous-state leaky bucket; the test suite pins the equivalence
against an independent bucket oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .accel import NUMBA_ENABLED, njit
from .cells import Cell


class Verdict(Enum):
    CONFORMING = "conforming"
    NON_CONFORMING = "non_conforming"


class PoliceMode(Enum):
    TAG = "tag"
    DROP = "drop"


class PoliceOutcome(Enum):
    PASSED = "passed"
    TAGGED = "tagged"
    DROPPED = "dropped"


@dataclass
class GcraState:
    """One conformance-test instance (one rate, one tolerance).

    increment_t is the seconds-per-cell of the contracted rate; limit_tau
    the tolerance. tat only ever moves forward.
    """

    increment_t: float
    limit_tau: float
    tat: float = 0.0
    last_arrival: float = float("-inf")
    nonconforming_count: int = 0

    def conforms(self, t: float) -> bool:
        """Pure test: would a cell arriving at t conform? No state change."""
        return t >= self.tat - self.limit_tau

    def commit(self, t: float) -> None:
        """Advance TAT for a cell accepted at t."""
        self.tat = max(t, self.tat) + self.increment_t

    def check(self, t: float) -> Verdict:
        """Virtual-scheduling rule for a cell arriving at time t.

        Arrivals must be fed in non-decreasing time order; an out-of-order
        timestamp is a caller bug and raises.
        """
        if t < self.last_arrival:
            raise ValueError(
                f"out-of-order arrival: t={t} before previous {self.last_arrival}")
        self.last_arrival = t
        if self.conforms(t):
            self.commit(t)
            return Verdict.CONFORMING
        self.nonconforming_count += 1
        return Verdict.NON_CONFORMING


def gcra_new(rate: float, tolerance: float) -> GcraState:
    """GCRA instance for a contracted rate (cells/s) and tolerance (s).

    tat starts at 0 so the first cell always conforms.
    """
    if rate <= 0:
        raise ValueError("GCRA rate must be positive")
    if tolerance < 0:
        raise ValueError("GCRA tolerance must be non-negative")
    return GcraState(increment_t=1.0 / rate, limit_tau=tolerance)


def burst_tolerance(scr: float, pcr: float, mbs: int) -> float:
    """SCR burst tolerance: tau_s = (MBS-1) * (1/SCR - 1/PCR)."""
    return (mbs - 1) * (1.0 / scr - 1.0 / pcr)


def police(state: GcraState, cell: Cell, t: float, mode: PoliceMode) -> PoliceOutcome:
    """UPC action on one cell: pass, tag (clp=1) or drop.

    Mutates the cell's clp bit in Tag mode; the caller discards the cell
    in Drop mode (the outcome says so).
    """
    if state.check(t) is Verdict.CONFORMING:
        return PoliceOutcome.PASSED
    if mode is PoliceMode.TAG:
        cell.clp = True
        return PoliceOutcome.TAGGED
    return PoliceOutcome.DROPPED


class DualPolicer:
    """PCR/CDVT plus SCR/burst-tolerance policing composed per TM4.0.

    A cell conforms only if it conforms to both tests; a cell failing
    either test updates neither (both-or-neither commit).
    """

    def __init__(self, pcr: float, cdvt: float, scr: float | None = None,
                 mbs: int | None = None):
        self.pcr_gcra = gcra_new(pcr, cdvt)
        self.scr_gcra = None
        if scr is not None:
            if mbs is None:
                raise ValueError("SCR policing requires an MBS")
            self.scr_gcra = gcra_new(scr, burst_tolerance(scr, pcr, mbs))

    def check(self, t: float) -> Verdict:
        ok = self.pcr_gcra.conforms(t)
        if self.scr_gcra is not None:
            ok = ok and self.scr_gcra.conforms(t)
        if ok:
            self.pcr_gcra.commit(t)
            if self.scr_gcra is not None:
                self.scr_gcra.commit(t)
            return Verdict.CONFORMING
        return Verdict.NON_CONFORMING

    def police(self, cell: Cell, t: float, mode: PoliceMode) -> PoliceOutcome:
        if self.check(t) is Verdict.CONFORMING:
            return PoliceOutcome.PASSED
        if mode is PoliceMode.TAG:
            cell.clp = True
            return PoliceOutcome.TAGGED
        return PoliceOutcome.DROPPED


# ---------------------------------------------------------------------------
# Batch kernels. These are the hot path of the oracle-equivalence check
# (1e5 sequences), so they carry @njit with a pure-Python fallback chosen
# by ABRSIM_DISABLE_NUMBA (see accel module).
# ---------------------------------------------------------------------------

def _scan_sequences_py(arrivals, offsets, increments, taus, out):
    n_seq = offsets.shape[0] - 1
    for s in range(n_seq):
        t_inc = increments[s]
        tau = taus[s]
        tat = 0.0
        for i in range(offsets[s], offsets[s + 1]):
            t = arrivals[i]
            if t >= tat - tau:
                out[i] = 1
                if t > tat:
                    tat = t + t_inc
                else:
                    tat = tat + t_inc
            else:
                out[i] = 0


_scan_sequences = njit(cache=True)(_scan_sequences_py) if NUMBA_ENABLED else _scan_sequences_py


def check_sequences(arrivals: np.ndarray, offsets: np.ndarray,
                    increments: np.ndarray, taus: np.ndarray) -> np.ndarray:
    """Vector GCRA verdicts for many independent arrival sequences.

    arrivals holds all sequences concatenated; sequence s spans
    arrivals[offsets[s]:offsets[s+1]] and is tested against
    (increments[s], taus[s]). Returns uint8 verdicts (1 = conforming)
    aligned with arrivals.
    """
    arrivals = np.ascontiguousarray(arrivals, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    out = np.empty(arrivals.shape[0], dtype=np.uint8)
    _scan_sequences(arrivals,
                    offsets,
                    np.ascontiguousarray(increments, dtype=np.float64),
                    np.ascontiguousarray(taus, dtype=np.float64),
                    out)
    return out


def check_sequence(arrivals: np.ndarray, rate: float, tolerance: float) -> np.ndarray:
    """Verdicts for a single non-decreasing arrival sequence."""
    if rate <= 0:
        raise ValueError("GCRA rate must be positive")
    arrivals = np.asarray(arrivals, dtype=np.float64)
    offsets = np.array([0, arrivals.shape[0]], dtype=np.int64)
    return check_sequences(arrivals, offsets,
                           np.array([1.0 / rate]), np.array([tolerance]))
