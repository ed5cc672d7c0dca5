"""Event-driven ATM switch process.

One SwitchProcess per node (switches and end-systems run the same state
machine; end-systems just attach local sources/destinations and use a
zero fabric delay). Cells arrive, cross the fabric after a fixed delay,
are enqueued per QoS level at their output port, and leave under a
strict-priority scheduler with per-buffer bandwidth caps and guarantees.

Feedback hooks: explicit-rate rewriting of backward RM cells (ERICA),
EFCI marking on departure, or CI/NI relative-rate marking, selected per
node. Optional VS/VD segmentation turns the control loop around at the
switch itself.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum

from .cells import CELL_SIZE_BITS, BufferConfig, Cell, CellKind, turn_around
from .endsystem import AbrDestination, AbrSource, VirtualSource
from .erica import EricaPortState
from .gcra import DualPolicer, PoliceMode, PoliceOutcome

_EPS = 1e-9

LOCAL = "__local__"  # routing target meaning "terminates at this node"


class FsmState(Enum):
    INIT = "init"
    CONFIG = "config"
    WAIT = "wait"


class FeedbackScheme(Enum):
    EXPLICIT_RATE = "explicit_rate"
    EFCI_BINARY = "efci_binary"
    RELATIVE_RATE = "relative_rate"
    NONE = "none"  # end-systems: transit only


class ConfigError(Exception):
    """Invalid node or buffer configuration found at startup."""


@dataclass
class Route:
    fwd: str  # output link for forward (data/FRM) cells, or LOCAL
    rev: str  # output link for backward RM cells, or LOCAL


class LevelQueue:
    """One output buffer: a FIFO with capacity and bandwidth bookkeeping."""

    def __init__(self, cfg: BufferConfig, link_cells_per_s: float):
        if cfg.max_bw is not None and cfg.max_bw > link_cells_per_s + _EPS:
            raise ConfigError(
                f"buffer level {cfg.qos_level}: max_bw exceeds link rate")
        self.cfg = cfg
        self.q: deque[Cell] = deque()
        self.drops_clp0 = 0
        self.drops_all = 0
        self.uncapped = cfg.max_bw is None or cfg.max_bw >= link_cells_per_s - _EPS
        self.tokens_cap = 1.0
        self.tokens_min = 0.0
        self.last_refill = 0.0

    def refill(self, now: float) -> None:
        dt = now - self.last_refill
        if dt <= 0:
            return
        if not self.uncapped:
            self.tokens_cap = min(1.0, self.tokens_cap + self.cfg.max_bw * dt)
        if self.cfg.min_bw > 0:
            self.tokens_min = min(1.0, self.tokens_min + self.cfg.min_bw * dt)
        self.last_refill = now

    @property
    def cap_ok(self) -> bool:
        return self.uncapped or self.tokens_cap >= 1.0 - _EPS

    @property
    def owed(self) -> bool:
        return self.cfg.min_bw > 0 and self.tokens_min >= 1.0 - _EPS


class Port:
    """Output side of one link: buffers, scheduler state, ERICA instance."""

    def __init__(self, link, buffers: list[BufferConfig], abr_qos_level: int,
                 erica: EricaPortState | None):
        self.link = link
        self.levels = sorted((LevelQueue(cfg, link.cells_per_s) for cfg in buffers),
                             key=lambda lq: lq.cfg.qos_level)
        levels_seen = [lq.cfg.qos_level for lq in self.levels]
        if len(set(levels_seen)) != len(levels_seen):
            raise ConfigError(f"duplicate qos_level in buffers for port {link.name}")
        self.by_level = {lq.cfg.qos_level: lq for lq in self.levels}
        if abr_qos_level not in self.by_level:
            raise ConfigError(f"abr_qos_level {abr_qos_level} has no buffer")
        self.abr_level = abr_qos_level
        self.erica = erica
        self.busy_until = 0.0
        self.send_pending = False
        self.sent_in_interval = 0
        self.hp_count_in_interval = 0

    @property
    def name(self) -> str:
        return self.link.name

    @property
    def abr_queue_len(self) -> int:
        return len(self.by_level[self.abr_level].q)

    def occupancy(self) -> int:
        return sum(len(lq.q) for lq in self.levels)


class SwitchProcess:
    """The Init/Config/Wait state machine driving one node."""

    def __init__(self, name: str, sim, feedback_scheme: FeedbackScheme,
                 vsvd: bool = False, fabric_delay: float = 0.0,
                 efci_threshold: int | None = None,
                 ci_threshold: int | None = None,
                 ni_threshold: int | None = None,
                 efci_to_ci: bool = True,
                 is_switch: bool = True):
        self.name = name
        self.sim = sim
        self.fsm = FsmState.INIT
        self.feedback_scheme = feedback_scheme
        self.vsvd = vsvd
        self.fabric_delay = fabric_delay
        self.efci_threshold = efci_threshold
        self.ci_threshold = ci_threshold
        self.ni_threshold = ni_threshold
        self.efci_to_ci = efci_to_ci
        self.is_switch = is_switch

        self.ports: dict[str, Port] = {}
        self.routing: dict[int, Route] = {}
        self.abr_vcs: set[int] = set()
        self.vc_qos_level: dict[int, int] = {}
        self.local_sources: dict[int, AbrSource] = {}
        self.local_dests: dict[int, AbrDestination] = {}
        self.vs_states: dict[int, VirtualSource] = {}
        self.vd_efci: dict[int, bool] = {}
        self.policers: dict[int, DualPolicer] = {}
        self.police_mode = PoliceMode.TAG
        self.config_backlog: list[tuple[Cell, str]] = []
        self.misroutes = 0

    # -- wiring ---------------------------------------------------------------

    def add_port(self, link, buffers: list[BufferConfig], abr_qos_level: int,
                 erica: EricaPortState | None = None) -> Port:
        port = Port(link, buffers, abr_qos_level, erica)
        self.ports[link.name] = port
        return port

    def add_route(self, vc: int, fwd: str, rev: str, abr: bool,
                  qos_level: int | None = None) -> None:
        for target in (fwd, rev):
            if target != LOCAL and target not in self.ports:
                raise ConfigError(f"{self.name}: route for vc {vc} uses unknown port {target}")
        self.routing[vc] = Route(fwd=fwd, rev=rev)
        if abr:
            self.abr_vcs.add(vc)
            if self.vsvd and fwd != LOCAL and rev != LOCAL:
                # This node segments the control loop for transiting ABR VCs.
                params = self.sim.abr_params_for(vc)
                self.vs_states[vc] = VirtualSource(
                    vc, params, self.sim.next_seq, checks=self.sim.checks)
                self.vd_efci[vc] = False
        elif qos_level is not None:
            self.vc_qos_level[vc] = qos_level

    # -- FSM: startup ---------------------------------------------------------

    def on_begin_sim(self, now: float) -> None:
        if self.fsm is not FsmState.INIT:
            raise ConfigError(f"{self.name}: begin_sim in state {self.fsm}")
        for port in self.ports.values():
            for lq in port.levels:
                if lq.cfg.capacity < 1:
                    raise ConfigError("buffer capacity must be at least 1")
        self.fsm = FsmState.CONFIG

    def on_notify_complete(self, now: float) -> None:
        if self.fsm is not FsmState.CONFIG:
            raise ConfigError(f"{self.name}: notify_complete in state {self.fsm}")
        self.fsm = FsmState.WAIT
        backlog, self.config_backlog = self.config_backlog, []
        for cell, ingress in backlog:
            self.on_cell_arrival(now, cell, ingress)

    # -- FSM: cell arrival ------------------------------------------------------

    def on_cell_arrival(self, now: float, cell: Cell, ingress: str) -> None:
        """Table-driven arrival handling; ingress is a link name or LOCAL
        for traffic handed over by this node's own application side."""
        if self.fsm is FsmState.CONFIG:
            self.config_backlog.append((cell, ingress))
            return
        if self.fsm is not FsmState.WAIT:
            raise ConfigError(f"{self.name}: cell before begin_sim")

        route = self.routing.get(cell.vc)
        if route is None:
            self.misroutes += 1
            self.sim.on_drop(now, cell, self.name, "misroute")
            return

        if ingress != LOCAL and cell.vc in self.policers:
            outcome = self.policers[cell.vc].police(cell, now, self.police_mode)
            if outcome is PoliceOutcome.DROPPED:
                self.sim.on_drop(now, cell, self.name, "policing")
                return

        if cell.vc in self.abr_vcs:
            self._abr_cell(now, cell, route, ingress)
        else:
            self._plain_cell(now, cell, route)

    def _plain_cell(self, now: float, cell: Cell, route: Route) -> None:
        if route.fwd == LOCAL:
            self.sim.on_deliver(now, cell, self.name)
            return
        port = self.ports[route.fwd]
        level = self.vc_qos_level.get(cell.vc, port.abr_level)
        if level < port.abr_level:
            port.hp_count_in_interval += 1
        self._to_fabric(now, cell, route.fwd)

    def _abr_cell(self, now: float, cell: Cell, route: Route, ingress: str) -> None:
        if cell.vc in self.vs_states and ingress != LOCAL:
            self._vsvd_cell(now, cell, route)
            return
        if cell.is_brm:
            if route.rev == LOCAL:
                # BRM home: the source end-system lives here.
                self.sim.on_deliver(now, cell, self.name)
                self.local_sources[cell.vc].on_brm(now, cell.rm)
                return
            fwd_port = self.ports.get(route.fwd) if route.fwd != LOCAL else None
            self._apply_backward_feedback(now, cell, fwd_port)
            self._count_input(self.ports[route.rev], cell)
            self._to_fabric(now, cell, route.rev)
            return
        # Forward direction: data or FRM.
        if route.fwd == LOCAL:
            if cell.kind is CellKind.DATA:
                self.sim.on_deliver(now, cell, self.name)
            self.local_dests[cell.vc].on_cell(now, cell)
            return
        port = self.ports[route.fwd]
        if cell.is_frm and port.erica is not None:
            port.erica.on_frm(cell.vc, cell.rm.ccr)
        self._count_input(port, cell)
        self._to_fabric(now, cell, route.fwd)

    def _vsvd_cell(self, now: float, cell: Cell, route: Route) -> None:
        """Destination rules, then source rules: the VS/VD loop split."""
        vs = self.vs_states[cell.vc]
        if cell.is_brm:
            # Downstream-segment feedback terminates at the virtual source.
            fwd_port = self.ports.get(route.fwd) if route.fwd != LOCAL else None
            self._apply_backward_feedback(now, cell, fwd_port)
            if fwd_port is not None and fwd_port.erica is not None:
                fwd_port.erica.note_activity(cell.vc)
            self.sim.on_deliver(now, cell, self.name)
            vs.on_brm(now, cell.rm)
            return
        if cell.is_frm:
            # Virtual destination: turn the upstream segment's FRM around.
            brm = turn_around(cell, self.efci_to_ci and self.vd_efci[cell.vc])
            self.vd_efci[cell.vc] = False
            fwd_port = self.ports.get(route.fwd) if route.fwd != LOCAL else None
            self._apply_backward_feedback(now, brm, fwd_port)
            vs.couple_feedback(brm.rm.er)
            self._count_input(self.ports[route.rev], brm)
            self._to_fabric(now, brm, route.rev)
            return
        # Data cell: latch EFCI for the VD, forward, let the VS regenerate
        # the downstream FRM stream.
        self.vd_efci[cell.vc] = cell.efci
        port = self.ports[route.fwd]
        self._count_input(port, cell)
        self._to_fabric(now, cell, route.fwd)
        if vs.on_data_forwarded():
            frm = vs.make_frm(now)
            self.sim.on_created(now, frm)
            if port.erica is not None:
                port.erica.on_frm(frm.vc, frm.rm.ccr)
            self._count_input(port, frm)
            self._to_fabric(now, frm, route.fwd)

    def _apply_backward_feedback(self, now: float, brm: Cell, fwd_port: Port | None) -> None:
        """Congestion feedback into a BRM, per this node's scheme, using
        the state of the port that carries the VC's forward traffic."""
        if fwd_port is None:
            return
        if self.feedback_scheme is FeedbackScheme.EXPLICIT_RATE:
            if fwd_port.erica is not None:
                new_er = fwd_port.erica.on_brm(brm.vc, brm.rm.er)
                self.sim.checks.er_rewrite(brm.vc, self.name, brm.rm.er, new_er)
                brm.rm.er = new_er
        elif self.feedback_scheme is FeedbackScheme.RELATIVE_RATE:
            qlen = fwd_port.abr_queue_len
            if self.ci_threshold is not None and qlen > self.ci_threshold:
                brm.rm.ci = True
            if self.ni_threshold is not None and qlen > self.ni_threshold:
                brm.rm.ni = True

    def _count_input(self, port: Port, cell: Cell) -> None:
        if port.erica is None:
            return
        out_of_rate = cell.kind is CellKind.RM and cell.rm.out_of_rate
        if out_of_rate:
            port.erica.note_activity(cell.vc)
        else:
            port.erica.note_abr_input(cell.vc)

    def ingest_local(self, now: float, cell: Cell) -> None:
        """Traffic originated at this node (paced source output, turned
        BRMs, background generators) entering the switching fabric."""
        self.on_cell_arrival(now, cell, LOCAL)

    def _to_fabric(self, now: float, cell: Cell, out_link: str) -> None:
        self.sim.schedule(now + self.fabric_delay,
                          self.on_end_of_fabric_delay, cell, out_link)

    # -- FSM: fabric and buffers -------------------------------------------------

    def on_end_of_fabric_delay(self, now: float, cell: Cell, out_link: str) -> None:
        port = self.ports[out_link]
        level = port.abr_level if cell.vc in self.abr_vcs \
            else self.vc_qos_level.get(cell.vc, port.abr_level)
        lq = port.by_level[level]
        if len(lq.q) < lq.cfg.capacity:
            lq.q.append(cell)
            self._activate(now, port)
            return
        # Buffer full. Tagged cells are the discardable stream: evict the
        # newest tagged cell to admit an untagged one, else drop the arrival.
        victim = cell
        if not cell.clp:
            for i in range(len(lq.q) - 1, -1, -1):
                if lq.q[i].clp:
                    victim = lq.q[i]
                    del lq.q[i]
                    lq.q.append(cell)
                    break
        lq.drops_all += 1
        if not victim.clp:
            lq.drops_clp0 += 1
        self.sim.on_drop(now, victim, port.name, "buffer_full")

    def _activate(self, now: float, port: Port) -> None:
        if not port.send_pending:
            port.send_pending = True
            self.sim.schedule(max(now, port.busy_until), self.on_time_to_send, port)

    def on_time_to_send(self, now: float, port: Port) -> None:
        port.send_pending = False
        for lq in port.levels:
            lq.refill(now)
        nonempty = [lq for lq in port.levels if lq.q]
        if not nonempty:
            return
        eligible = [lq for lq in nonempty if lq.owed and lq.cap_ok]
        if not eligible:
            eligible = [lq for lq in nonempty if lq.cap_ok]
        if not eligible:
            # Every backlogged buffer is rate-capped out; wake when the
            # earliest cap token accrues.
            t_next = min(now + (1.0 - lq.tokens_cap) / lq.cfg.max_bw
                         for lq in nonempty)
            port.send_pending = True
            self.sim.schedule(t_next, self.on_time_to_send, port)
            return
        lq = eligible[0]
        occupancy_before = len(lq.q)
        cell = lq.q.popleft()
        if not lq.uncapped:
            lq.tokens_cap -= 1.0
        if lq.cfg.min_bw > 0 and lq.tokens_min >= 1.0 - _EPS:
            lq.tokens_min -= 1.0
        if (self.feedback_scheme is FeedbackScheme.EFCI_BINARY
                and lq.cfg.qos_level == port.abr_level
                and self.efci_threshold is not None
                and occupancy_before > self.efci_threshold
                and not cell.is_brm):
            cell.efci = True
        port.sent_in_interval += 1
        port.busy_until = now + port.link.cell_time
        self.sim.transmit(port.link, cell, now)
        if any(lq.q for lq in port.levels):
            port.send_pending = True
            self.sim.schedule(port.busy_until, self.on_time_to_send, port)

    # -- per-interval measurement -------------------------------------------------

    def on_interval_end(self, now: float, port: Port) -> None:
        interval = port.erica.averaging_interval
        hp_bw = port.hp_count_in_interval / interval
        record = port.erica.interval_end(hp_bw, now)
        self.sim.metrics.erica_row(record)
        util = port.sent_in_interval * CELL_SIZE_BITS / (port.link.rate_bits * interval)
        self.sim.metrics.util_row(now, port.name, util)
        for lq in port.levels:
            self.sim.metrics.queue_row(now, port.name, lq.cfg.qos_level,
                                       len(lq.q), lq.drops_clp0, lq.drops_all)
        port.hp_count_in_interval = 0
        port.sent_in_interval = 0
        self.sim.schedule(now + interval, self.on_interval_end, port)
