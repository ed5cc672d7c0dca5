"""ERICA explicit-rate allocation, one instance per switch output port.

Each averaging interval the port measures its ABR input rate, the
bandwidth taken by higher-priority traffic and the set of active VCs,
then derives a load factor z and a fair share. Feedback is written into
backward RM cells of the VCs whose forward traffic leaves through this
port, at most one fresh computation per VC per interval.
"""

from __future__ import annotations

from dataclasses import dataclass, field

INFINITE_LOAD = float("inf")  # z sentinel when no ABR capacity is left


@dataclass
class EricaPortState:
    port: str
    link_capacity: float  # cells/s, fixed per port
    target_fraction: float = 0.9
    averaging_interval: float = 0.1  # seconds
    delta: float = 0.1  # overload tolerance on z

    target_abr_capacity: float = field(init=False)
    z: float = field(init=False, default=0.0)
    fair_share: float = field(init=False)
    max_alloc_previous: float = field(init=False)
    max_alloc_current: float = field(init=False)
    abr_input_rate: float = field(init=False, default=0.0)
    n_active: int = field(init=False, default=0)

    ccr_table: dict[int, float] = field(default_factory=dict)
    fed_back_this_interval: dict[int, float] = field(default_factory=dict)
    abr_input_count: int = field(init=False, default=0)
    active_vcs: set[int] = field(default_factory=set)
    intervals_completed: int = field(init=False, default=0)

    def __post_init__(self):
        if not 0.0 < self.target_fraction <= 1.0:
            raise ValueError("target_fraction must lie in (0, 1]")
        if self.averaging_interval <= 0:
            raise ValueError("averaging_interval must be positive")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        # Optimistic priors until the first measurement interval closes:
        # full target capacity available, nobody measured yet.
        self.target_abr_capacity = self.target_fraction * self.link_capacity
        self.fair_share = self.target_abr_capacity
        self.max_alloc_previous = self.target_abr_capacity
        self.max_alloc_current = self.target_abr_capacity

    # -- measurement hooks -------------------------------------------------

    def note_abr_input(self, vc: int) -> None:
        """One in-rate ABR cell (data or RM) arrived for this port."""
        self.abr_input_count += 1
        self.active_vcs.add(vc)

    def note_activity(self, vc: int) -> None:
        """VC seen without adding to the input count (e.g. out-of-rate RM)."""
        self.active_vcs.add(vc)

    def on_frm(self, vc: int, ccr_in_cell: float) -> None:
        """Record the CCR a forward RM cell declares for its VC."""
        self.ccr_table[vc] = ccr_in_cell
        self.active_vcs.add(vc)

    # -- the algorithm -----------------------------------------------------

    def interval_end(self, higher_priority_bw: float, now: float) -> dict:
        """Close the averaging interval; returns the telemetry record."""
        self.target_abr_capacity = self.target_fraction * (
            self.link_capacity - higher_priority_bw)
        self.abr_input_rate = self.abr_input_count / self.averaging_interval
        self.n_active = len(self.active_vcs)

        if self.target_abr_capacity <= 0.0:
            self.z = INFINITE_LOAD
            self.fair_share = 0.0
        else:
            self.z = self.abr_input_rate / self.target_abr_capacity
            if self.n_active == 0:
                self.fair_share = self.target_abr_capacity
            else:
                self.fair_share = self.target_abr_capacity / self.n_active

        self.max_alloc_previous = self.max_alloc_current
        self.max_alloc_current = self.fair_share

        self.abr_input_count = 0
        self.active_vcs.clear()
        self.fed_back_this_interval.clear()
        self.intervals_completed += 1
        return {
            "time": now,
            "port": self.port,
            "z": self.z,
            "n_active": self.n_active,
            "fair_share": self.fair_share,
            "target_abr_capacity": self.target_abr_capacity,
            "abr_input_rate": self.abr_input_rate,
        }

    def on_brm(self, vc: int, er_in_cell: float) -> float:
        """Feedback for one backward RM cell; returns the new ER field.

        Only the first BRM of a VC in an interval triggers a fresh
        computation; repeats are still bounded by that grant so the ER
        carried by the cell can never grow at this port.
        """
        self.active_vcs.add(vc)
        granted = self.fed_back_this_interval.get(vc)
        if granted is None:
            granted = self._fresh_allocation(vc)
            self.fed_back_this_interval[vc] = granted
        return min(er_in_cell, granted)

    def _fresh_allocation(self, vc: int) -> float:
        ccr = self.ccr_table.get(vc, 0.0)
        if self.z == INFINITE_LOAD or self.z <= 0.0:
            # No load measured (or no capacity): the CCR/z share carries
            # no information, so it contributes nothing.
            vc_share = 0.0
        else:
            vc_share = ccr / self.z

        if self.z > 1.0 + self.delta:
            er = max(self.fair_share, vc_share)
        else:
            er = max(self.max_alloc_previous, vc_share)
        self.max_alloc_current = max(self.max_alloc_current, er)
        if er > self.fair_share and ccr < self.fair_share:
            er = self.fair_share
        # The port's own grant; negative target (higher-priority overload)
        # floors at zero so the wire never carries a negative rate.
        return min(er, max(self.target_abr_capacity, 0.0))
