"""Deterministic discrete-event core and topology construction.

Events are dispatched in (timestamp, insertion order) so two runs of the
same scenario with the same seed replay identically. The reference
topology is the N-source configuration: n sources into switch A, a
bottleneck link to switch B, n destinations; background generators tap
the bottleneck through their own access links.
"""

from __future__ import annotations

import heapq
import random
from collections import deque
from dataclasses import dataclass

from .cells import AbrParams, BufferConfig, Cell, CellKind
from .endsystem import AbrDestination, AbrSource
from .erica import EricaPortState
from .gcra import DualPolicer, PoliceMode
from .metrics import MetricsCollector, RunReport
from .scenario import BackgroundConfig, Scenario
from .switch import LOCAL, FeedbackScheme, SwitchProcess


class Link:
    """Directed point-to-point pipe: serialization plus propagation."""

    def __init__(self, name: str, src: str, dst: str, rate_cells: float,
                 prop_delay: float):
        self.name = name
        self.src = src
        self.dst = dst
        self.cells_per_s = rate_cells
        self.rate_bits = rate_cells * 424.0
        self.cell_time = 1.0 / rate_cells
        self.prop_delay = prop_delay
        self.last_arrival = float("-inf")


@dataclass
class LinkSpec:
    name: str
    src: str
    dst: str
    rate_cells: float
    prop_delay: float


@dataclass
class TopologyPlan:
    nodes: dict[str, str]  # name -> "switch" | "endsystem"
    links: list[LinkSpec]
    vc_paths: dict[int, list[str]]  # vc -> node names, source first


def _link_name(a: str, b: str) -> str:
    return f"{a}->{b}"


def build_n_source(n: int, bottleneck_rate: float, access_rate: float,
                   prop_delay: float) -> TopologyPlan:
    """Fig-1 style reference topology: n sources, two switches, one
    bottleneck, n destinations; one ABR VC per source."""
    if n < 1:
        raise ValueError("n_source topology needs at least one source")
    nodes = {"sw_a": "switch", "sw_b": "switch"}
    links: list[LinkSpec] = []

    def both_ways(a: str, b: str, rate: float) -> None:
        links.append(LinkSpec(_link_name(a, b), a, b, rate, prop_delay))
        links.append(LinkSpec(_link_name(b, a), b, a, rate, prop_delay))

    both_ways("sw_a", "sw_b", bottleneck_rate)
    vc_paths = {}
    for i in range(n):
        src, dst = f"src{i}", f"dst{i}"
        nodes[src] = "endsystem"
        nodes[dst] = "endsystem"
        both_ways(src, "sw_a", access_rate)
        both_ways("sw_b", dst, access_rate)
        vc_paths[i] = [src, "sw_a", "sw_b", dst]
    return TopologyPlan(nodes=nodes, links=links, vc_paths=vc_paths)


def add_background_tap(plan: TopologyPlan, index: int, vc: int,
                       access_rate: float, prop_delay: float) -> None:
    """Attach one background generator across the bottleneck."""
    gen, sink = f"bg{index}", f"bg_sink{index}"
    plan.nodes[gen] = "endsystem"
    plan.nodes[sink] = "endsystem"
    plan.links.append(LinkSpec(_link_name(gen, "sw_a"), gen, "sw_a",
                               access_rate, prop_delay))
    plan.links.append(LinkSpec(_link_name("sw_b", sink), "sw_b", sink,
                               access_rate, prop_delay))
    plan.vc_paths[vc] = [gen, "sw_a", "sw_b", sink]


class Checks:
    """Run-wide invariant recorder; violations fail the acceptance gate."""

    MAX_RECORDED = 200

    def __init__(self):
        self.violations: list[str] = []
        self._oor: dict[int, deque] = {}
        self._order: dict[tuple, int] = {}

    def record(self, message: str) -> None:
        if len(self.violations) < self.MAX_RECORDED:
            self.violations.append(message)

    def acr_update(self, vc: int, acr: float, params: AbrParams) -> None:
        if not (params.mcr - 1e-9 <= acr <= params.pcr + 1e-9):
            self.record(f"acr out of [mcr, pcr]: vc={vc} acr={acr}")

    def emission(self, vc: int, now: float, last: float | None, acr: float) -> None:
        if last is not None and acr > 0 and now - last < 1.0 / acr - 1e-9:
            self.record(f"emission spacing violated: vc={vc} t={now} "
                        f"dt={now - last} acr={acr}")

    def oor_emission(self, vc: int, now: float) -> None:
        window = self._oor.setdefault(vc, deque())
        window.append(now)
        while window and window[0] <= now - 1.0:
            window.popleft()
        if len(window) > 10:
            self.record(f"out-of-rate RM budget exceeded: vc={vc} t={now}")

    def er_rewrite(self, vc: int, node: str, before: float, after: float) -> None:
        if after > before + 1e-9:
            self.record(f"ER increased at {node}: vc={vc} {before} -> {after}")

    def delivery_order(self, key: tuple, seq: int) -> None:
        last = self._order.get(key, -1)
        if seq <= last:
            self.record(f"reordering at {key}: seq {seq} after {last}")
        else:
            self._order[key] = seq

    def causality(self, t: float, now: float) -> None:
        if t < now - 1e-9:
            self.record(f"event scheduled in the past: {t} < {now}")


class BackgroundSource:
    """CBR/VBR/UBR cell generator feeding one node's fabric."""

    def __init__(self, cfg: BackgroundConfig, vc: int, sim: "Simulation",
                 node: SwitchProcess):
        self.cfg = cfg
        self.vc = vc
        self.sim = sim
        self.node = node
        self._burst_left = 0
        self._off_after = 0.0

    def start(self) -> None:
        if self.cfg.category == "vbr":
            self.sim.schedule(self.cfg.start_time, self._emit_vbr)
        else:
            self.sim.schedule(self.cfg.start_time, self._emit_fixed, 0)

    def _make_cell(self, now: float) -> Cell:
        return Cell(vc=self.vc, kind=CellKind.DATA,
                    seq=self.sim.next_seq(self.vc), created_at=now)

    def _emit_fixed(self, now: float, k: int) -> None:
        cell = self._make_cell(now)
        self.sim.on_created(now, cell)
        self.node.ingest_local(now, cell)
        self.sim.schedule(self.cfg.start_time + (k + 1) / self.cfg.pcr,
                          self._emit_fixed, k + 1)

    def _emit_vbr(self, now: float) -> None:
        if self._burst_left == 0:
            burst = self.sim.rng.randint(1, self.cfg.mbs)
            self._burst_left = burst
            # Off period sized so the long-run rate stays at or below SCR,
            # with jitter stretching it further.
            base_off = burst / self.cfg.scr - burst / self.cfg.pcr
            self._off_after = base_off * (1.0 + 0.5 * self.sim.rng.random())
        cell = self._make_cell(now)
        self.sim.on_created(now, cell)
        self.node.ingest_local(now, cell)
        self._burst_left -= 1
        gap = 1.0 / self.cfg.pcr
        if self._burst_left == 0:
            gap += self._off_after
        self.sim.schedule(now + gap, self._emit_vbr)


class Simulation:
    """One deterministic run of a scenario."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.now = 0.0
        self._heap: list = []
        self._push_seq = 0
        self._vc_seq: dict[int, int] = {}
        self.rng = random.Random(scenario.seed)
        self.metrics = MetricsCollector(scenario.duration,
                                        scenario.steady_state_fraction)
        self.checks = Checks()
        self.links: dict[str, Link] = {}
        self.nodes: dict[str, SwitchProcess] = {}
        self.abr_sources: dict[int, AbrSource] = {}
        self.abr_dests: dict[int, AbrDestination] = {}
        self.background: list[BackgroundSource] = []
        self.abr_vc_ids: list[int] = []
        self._build()

    # -- facade used by nodes and end-systems --------------------------------

    def schedule(self, t: float, fn, *args) -> None:
        self.checks.causality(t, self.now)
        heapq.heappush(self._heap, (t, self._push_seq, fn, args))
        self._push_seq += 1

    def transmit(self, link: Link, cell: Cell, now: float) -> None:
        arrival = now + link.cell_time + link.prop_delay
        if arrival < link.last_arrival - 1e-9:
            self.checks.record(f"link FIFO violated on {link.name}")
        link.last_arrival = arrival
        self.schedule(arrival, self.nodes[link.dst].on_cell_arrival,
                      cell, link.name)

    def next_seq(self, vc: int) -> int:
        n = self._vc_seq.get(vc, 0)
        self._vc_seq[vc] = n + 1
        return n

    def abr_params_for(self, vc: int) -> AbrParams:
        return self.scenario.abr

    def on_created(self, now: float, cell: Cell) -> None:
        self.metrics.on_created(now, cell)

    def on_deliver(self, now: float, cell: Cell, node_name: str) -> None:
        is_data = cell.kind is CellKind.DATA
        stream = "data" if is_data else "rm"
        self.checks.delivery_order((cell.vc, node_name, stream), cell.seq)
        self.metrics.on_delivered(now, cell, is_data)

    def on_drop(self, now: float, cell: Cell, where: str, reason: str) -> None:
        self.metrics.on_dropped(now, cell, where, reason)

    # -- construction ------------------------------------------------------------

    def _build(self) -> None:
        sc = self.scenario
        topo = sc.topology
        plan = build_n_source(topo.n_sources, topo.bottleneck_rate,
                              topo.access_rate, topo.prop_delay)
        self.abr_vc_ids = list(range(topo.n_sources))
        bg_vcs = []
        for j, bg in enumerate(sc.background):
            vc = topo.n_sources + j
            add_background_tap(plan, j, vc, topo.access_rate, topo.prop_delay)
            bg_vcs.append(vc)

        for spec in plan.links:
            self.links[spec.name] = Link(spec.name, spec.src, spec.dst,
                                         spec.rate_cells, spec.prop_delay)

        out_links = {name: [l for l in self.links.values() if l.src == name]
                     for name in plan.nodes}

        for name, kind in plan.nodes.items():
            if kind == "switch":
                node = self._build_switch(name, out_links[name])
            else:
                node = SwitchProcess(name, self, FeedbackScheme.NONE,
                                     fabric_delay=0.0, is_switch=False)
                for link in out_links[name]:
                    node.add_port(link, [BufferConfig(qos_level=0, capacity=4096)],
                                  abr_qos_level=0)
            self.nodes[name] = node

        bg_level = {topo.n_sources + j: bg.qos_level
                    for j, bg in enumerate(sc.background)}
        for vc, path in plan.vc_paths.items():
            abr = vc in self.abr_vc_ids
            for i, node_name in enumerate(path):
                fwd = _link_name(node_name, path[i + 1]) if i + 1 < len(path) else LOCAL
                rev = LOCAL
                if i > 0:
                    back = _link_name(node_name, path[i - 1])
                    if back in self.links:
                        rev = back
                self.nodes[node_name].add_route(vc, fwd, rev, abr,
                                                qos_level=bg_level.get(vc))

        for src_cfg in sc.sources:
            vc = src_cfg.index
            self._attach_endsystem_pair(vc, f"src{vc}", f"dst{vc}", src_cfg)

        for j, bg in enumerate(sc.background):
            vc = topo.n_sources + j
            gen = BackgroundSource(bg, vc, self, self.nodes[f"bg{j}"])
            self.background.append(gen)

        if sc.policing.enabled:
            entry = self.nodes["sw_a"]
            entry.police_mode = (PoliceMode.TAG if sc.policing.mode == "tag"
                                 else PoliceMode.DROP)
            for vc in self.abr_vc_ids:
                entry.policers[vc] = DualPolicer(pcr=sc.abr.pcr,
                                                 cdvt=sc.policing.cdvt)

        # Startup choreography: every node initializes, then the neighbor
        # notification handshake completes, then traffic may flow.
        for node in self.nodes.values():
            self.schedule(0.0, node.on_begin_sim)
        for node in self.nodes.values():
            self.schedule(0.0, node.on_notify_complete)
        for source in self.abr_sources.values():
            source.start()
        for gen in self.background:
            gen.start()
        for node in self.nodes.values():
            if node.is_switch:
                for port in node.ports.values():
                    self.schedule(port.erica.averaging_interval,
                                  node.on_interval_end, port)

    def _build_switch(self, name: str, links: list[Link]) -> SwitchProcess:
        sc = self.scenario
        fastest = max(l.cells_per_s for l in links)
        fabric = sc.switch.fabric_delay
        if fabric is None:
            fabric = 4.0 / fastest
        abr_cap = next(b.capacity for b in sc.switch.buffers
                       if b.qos_level == sc.switch.abr_qos_level)
        efci_th = sc.switch.efci_threshold
        if efci_th is None:
            efci_th = abr_cap // 2
        ci_th = sc.switch.ci_threshold
        if ci_th is None:
            ci_th = int(0.8 * abr_cap)
        ni_th = sc.switch.ni_threshold
        if ni_th is None:
            ni_th = int(0.4 * abr_cap)
        node = SwitchProcess(name, self, sc.switch.feedback_scheme,
                             vsvd=sc.switch.vsvd, fabric_delay=fabric,
                             efci_threshold=efci_th, ci_threshold=ci_th,
                             ni_threshold=ni_th, efci_to_ci=sc.switch.efci_to_ci,
                             is_switch=True)
        for link in links:
            interval = sc.erica.averaging_interval
            if interval is None:
                interval = 100.0 * link.cell_time
            erica = EricaPortState(port=link.name,
                                   link_capacity=link.cells_per_s,
                                   target_fraction=sc.erica.target_fraction,
                                   averaging_interval=interval,
                                   delta=sc.erica.delta)
            node.add_port(link, sc.switch.buffers, sc.switch.abr_qos_level, erica)
        return node

    def _attach_endsystem_pair(self, vc: int, src_name: str, dst_name: str,
                               src_cfg) -> None:
        src_node = self.nodes[src_name]
        dst_node = self.nodes[dst_name]

        def emit_from_source(now, cell, node=src_node):
            self.on_created(now, cell)
            node.ingest_local(now, cell)

        def emit_brm(now, cell, node=dst_node):
            node.ingest_local(now, cell)

        def on_dest_drop(now, cell, reason, where=dst_name):
            self.on_drop(now, cell, where, reason)

        source = AbrSource(vc, self.scenario.abr, self.schedule,
                           emit_from_source, self.next_seq,
                           demand=src_cfg.demand, start_time=src_cfg.start_time,
                           telemetry=self.metrics.acr_row, checks=self.checks)
        dest = AbrDestination(vc, self.schedule, emit_brm,
                              efci_to_ci=self.scenario.switch.efci_to_ci,
                              drop_cb=on_dest_drop, checks=self.checks)
        src_node.local_sources[vc] = source
        dst_node.local_dests[vc] = dest
        self.abr_sources[vc] = source
        self.abr_dests[vc] = dest

    # -- execution -----------------------------------------------------------------

    def run(self) -> RunReport:
        duration = self.scenario.duration
        while self._heap and self._heap[0][0] <= duration:
            t, _, fn, args = heapq.heappop(self._heap)
            self.now = t
            fn(t, *args)
        in_flight = self._audit_in_flight()
        return RunReport(
            scenario_name=self.scenario.name,
            seed=self.scenario.seed,
            duration=duration,
            metrics=self.metrics,
            in_flight=in_flight,
            invariant_violations=list(self.checks.violations),
            abr_vcs=list(self.abr_vc_ids),
            misroutes=sum(n.misroutes for n in self.nodes.values()),
        )

    def _audit_in_flight(self) -> int:
        count = 0
        for (_, _, _, args) in self._heap:
            count += sum(1 for a in args if isinstance(a, Cell))
        for node in self.nodes.values():
            count += len(node.config_backlog)
            for port in node.ports.values():
                for lq in port.levels:
                    count += len(lq.q)
        for dest in self.abr_dests.values():
            if dest.deferred is not None:
                count += 1
        return count


def run(scenario: Scenario) -> RunReport:
    """Validate, build and execute one scenario deterministically."""
    return Simulation(scenario).run()
