"""ABR end-system behavior.

Sources pace cells at their allowed cell rate (ACR), interleave one
forward RM cell per nrm in-rate cells, and adapt ACR from returning
backward RM cells. Destinations latch EFCI from data cells and turn RM
cells around. Out-of-rate RM emission is capped at 10 cells/s per VC.
"""

from __future__ import annotations

from .cells import AbrParams, Cell, CellKind, RmDirection, RmPayload, make_frm, turn_around

_EPS = 1e-12

OOR_CELLS_PER_SECOND = 10.0  # out-of-rate RM budget per VC


class OutOfRateLimiter:
    """Enforces the 10/s per-VC out-of-rate RM cap.

    Realized as a minimum inter-emission spacing of 1/10 s, which keeps
    any sliding one-second window at or below 10 emissions.
    """

    def __init__(self, per_second: float = OOR_CELLS_PER_SECOND):
        self.spacing = 1.0 / per_second
        self.last_emission = float("-inf")

    def try_acquire(self, now: float) -> bool:
        if now >= self.last_emission + self.spacing - _EPS:
            self.last_emission = now
            return True
        return False

    def next_time(self, now: float) -> float:
        return max(now, self.last_emission + self.spacing)


def apply_source_rules(acr: float, params: AbrParams, ci: bool, ni: bool,
                       er: float) -> tuple[float, str]:
    """Rate adaptation on one BRM: decrease on CI, increase unless NI,
    then clamp into [mcr, min(er, pcr)]. Returns (new_acr, trigger label).
    """
    if ci:
        acr = acr - acr * params.rdf
        trigger = "CI"
    elif not ni:
        acr = acr + params.rif * params.pcr
        trigger = "ER"
    else:
        trigger = "NI"
    acr = min(acr, er, params.pcr)
    acr = max(acr, params.mcr)
    return acr, trigger


class AbrSource:
    """Per-VC source: ACR-paced emission with FRM interleaving.

    demand is either the string 'greedy' (infinite backlog) or an
    application arrival rate in cells/s (deterministic spacing). Cells
    leave through emit_cell(now, cell); the engine owns routing and
    accounting. schedule(t, fn, *args) books future work.
    """

    def __init__(self, vc: int, params: AbrParams, schedule, emit_cell,
                 next_seq, demand="greedy", start_time: float = 0.0,
                 telemetry=None, checks=None):
        self.vc = vc
        self.params = params
        self._schedule = schedule
        self._emit = emit_cell
        self._next_seq = next_seq
        self.greedy = demand == "greedy"
        self.demand_rate = None if self.greedy else float(demand)
        self.start_time = start_time
        self._telemetry = telemetry
        self._checks = checks

        self.acr = params.icr
        self.time_of_last_cell: float | None = None
        self.cells_since_frm = 0
        self.backlog = 0
        self.unack_frm = 0
        self.frm_sent = 0
        self.brm_received = 0
        self.oor_budget = OutOfRateLimiter()
        self._epoch = 0
        self._wake_pending = False
        self._arrivals_emitted = 0

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> None:
        if self._telemetry:
            self._telemetry(self.start_time, self.vc, self.acr, "ICR")
        if not self.greedy:
            self._schedule(self.start_time, self._on_app_arrival, 0)
        self._reschedule_wake(self.start_time)

    def _on_app_arrival(self, now: float, k: int) -> None:
        self.backlog += 1
        self._arrivals_emitted = k + 1
        self._schedule(self.start_time + (k + 1) / self.demand_rate,
                       self._on_app_arrival, k + 1)
        if not self._wake_pending:
            self._reschedule_wake(now)

    def add_backlog(self, now: float, n: int = 1) -> None:
        """Instantaneous application burst (frames abstracted as cells)."""
        self.backlog += n
        if not self._wake_pending:
            self._reschedule_wake(now)

    # -- rate adaptation ----------------------------------------------------

    def on_brm(self, now: float, payload: RmPayload) -> None:
        if payload.dir is not RmDirection.BACKWARD:
            raise ValueError("source received a forward RM payload")
        self.brm_received += 1
        if self.unack_frm > 0:
            self.unack_frm -= 1
        old = self.acr
        self.acr, trigger = apply_source_rules(
            self.acr, self.params, payload.ci, payload.ni, payload.er)
        self._note_acr(now, old, trigger)
        if (old <= 0.0) != (self.acr <= 0.0) or not self._wake_pending:
            self._reschedule_wake(now)

    def on_idle_restart(self, now: float) -> None:
        """ACR falls back to ICR after an idle gap longer than ADTF."""
        if self.time_of_last_cell is None:
            return
        if now - self.time_of_last_cell > self.params.adtf and self.acr > self.params.icr:
            old = self.acr
            self.acr = self.params.icr
            self._note_acr(now, old, "ADTF")

    def _note_acr(self, now: float, old: float, trigger: str) -> None:
        if self._checks:
            self._checks.acr_update(self.vc, self.acr, self.params)
        if self._telemetry and self.acr != old:
            self._telemetry(now, self.vc, self.acr, trigger)

    # -- emission machinery ---------------------------------------------------

    def _reschedule_wake(self, now: float) -> None:
        self._epoch += 1
        if self.acr <= 0.0:
            self._wake_pending = True
            self._schedule(self.oor_budget.next_time(now), self._on_wake, self._epoch)
        elif self.greedy or self.backlog > 0:
            t = now
            if self.time_of_last_cell is not None:
                t = max(now, self.time_of_last_cell + 1.0 / self.acr)
            self._wake_pending = True
            self._schedule(t, self._on_wake, self._epoch)
        else:
            self._wake_pending = False

    def _on_wake(self, now: float, epoch: int) -> None:
        if epoch != self._epoch:
            return
        self.on_idle_restart(now)
        if self.acr <= 0.0:
            self._probe(now)
            return
        if not self.greedy and self.backlog == 0:
            self._wake_pending = False
            return
        earliest = now
        if self.time_of_last_cell is not None:
            earliest = self.time_of_last_cell + 1.0 / self.acr
        if now < earliest - _EPS:
            self._schedule(earliest, self._on_wake, epoch)
            return
        self._emit_in_rate(now)
        self._schedule(now + 1.0 / self.acr, self._on_wake, epoch)

    def _emit_in_rate(self, now: float) -> None:
        if self._checks:
            self._checks.emission(self.vc, now, self.time_of_last_cell, self.acr)
        if self.cells_since_frm == self.params.nrm - 1:
            cell = make_frm(self.vc, ccr=self.acr, er_seed=self.params.pcr,
                            seq=self._next_seq(self.vc), created_at=now)
            self.cells_since_frm = 0
            self.frm_sent += 1
            self.unack_frm += 1
        else:
            cell = Cell(vc=self.vc, kind=CellKind.DATA,
                        seq=self._next_seq(self.vc), created_at=now)
            self.cells_since_frm += 1
            if not self.greedy:
                self.backlog -= 1
        self.time_of_last_cell = now
        self._emit(now, cell)

    def _probe(self, now: float) -> None:
        """ACR is zero: periodically sense the network out-of-rate."""
        if self.oor_budget.try_acquire(now):
            cell = make_frm(self.vc, ccr=0.0, er_seed=self.params.pcr,
                            seq=self._next_seq(self.vc), created_at=now,
                            out_of_rate=True)
            if self._checks:
                self._checks.oor_emission(self.vc, now)
            self.frm_sent += 1
            self.unack_frm += 1
            self._emit(now, cell)
        self._schedule(self.oor_budget.next_time(now), self._on_wake, self._epoch)


class AbrDestination:
    """Per-VC destination: EFCI latch, RM turnaround, out-of-rate deferral.

    reverse_acr=None models an unconstrained reverse direction (BRMs ride
    in-rate immediately). reverse_acr=0 models a reverse direction that
    cannot carry them: turnarounds go out-of-rate under the 10/s budget,
    and when the budget is dry only the newest pending BRM is kept.
    """

    def __init__(self, vc: int, schedule, emit_brm, reverse_acr: float | None = None,
                 efci_to_ci: bool = True, drop_cb=None, checks=None):
        self.vc = vc
        self._schedule = schedule
        self._emit_brm = emit_brm
        self.reverse_acr = reverse_acr
        self.efci_to_ci = efci_to_ci
        self._drop_cb = drop_cb
        self._checks = checks
        self.last_efci_seen = False
        self.oor_budget = OutOfRateLimiter()
        self.deferred: Cell | None = None
        self._release_pending = False
        self.data_received = 0
        self.frm_received = 0

    def on_cell(self, now: float, cell: Cell) -> None:
        if cell.kind is CellKind.DATA:
            self.last_efci_seen = cell.efci
            self.data_received += 1
            return
        if cell.rm.dir is not RmDirection.FORWARD:
            raise ValueError("destination received a backward RM cell")
        self.frm_received += 1
        brm = turn_around(cell, self.efci_to_ci and self.last_efci_seen)
        self.last_efci_seen = False
        if self.reverse_acr is None or self.reverse_acr > 0.0:
            self._emit_brm(now, brm)
            return
        # Reverse direction cannot carry the BRM in-rate.
        brm.rm.out_of_rate = True
        brm.clp = True
        if self.oor_budget.try_acquire(now):
            if self._checks:
                self._checks.oor_emission(self.vc, now)
            self._emit_brm(now, brm)
            return
        if self.deferred is not None and self._drop_cb:
            self._drop_cb(now, self.deferred, "brm_coalesced")
        self.deferred = brm
        if not self._release_pending:
            self._release_pending = True
            self._schedule(self.oor_budget.next_time(now), self._on_release)

    def _on_release(self, now: float) -> None:
        self._release_pending = False
        if self.deferred is None:
            return
        if self.oor_budget.try_acquire(now):
            if self._checks:
                self._checks.oor_emission(self.vc, now)
            self._emit_brm(now, self.deferred)
            self.deferred = None
        else:
            self._release_pending = True
            self._schedule(self.oor_budget.next_time(now), self._on_release)


class VirtualSource:
    """Per-VC virtual source at a VS/VD switch.

    Regenerates one FRM per nrm cells of the VC forwarded downstream,
    carrying its own ACR as CCR. The ACR follows normal source rules on
    BRMs from the downstream segment and is additionally overwritten by
    the feedback the upstream segment was given (the coupling rule).
    """

    def __init__(self, vc: int, params: AbrParams, next_seq, checks=None):
        self.vc = vc
        self.params = params
        self._next_seq = next_seq
        self._checks = checks
        self.acr = params.icr
        self.cells_since_frm = 0
        self.frm_sent = 0
        self.brm_received = 0

    def on_data_forwarded(self) -> bool:
        """True when an FRM should be inserted after this data cell."""
        self.cells_since_frm += 1
        if self.cells_since_frm >= self.params.nrm - 1:
            self.cells_since_frm = 0
            return True
        return False

    def make_frm(self, now: float) -> Cell:
        self.frm_sent += 1
        return make_frm(self.vc, ccr=self.acr, er_seed=self.params.pcr,
                        seq=self._next_seq(self.vc), created_at=now)

    def on_brm(self, now: float, payload: RmPayload) -> None:
        self.brm_received += 1
        self.acr, _ = apply_source_rules(
            self.acr, self.params, payload.ci, payload.ni, payload.er)
        if self._checks:
            self._checks.acr_update(self.vc, self.acr, self.params)

    def couple_feedback(self, er: float) -> None:
        self.acr = max(self.params.mcr, min(er, self.params.pcr))
        if self._checks:
            self._checks.acr_update(self.vc, self.acr, self.params)
