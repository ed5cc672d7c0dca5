"""Statistics collection: delays, loss ratios, utilization, fairness.

The collector receives raw events from the engine (deliveries, drops,
ACR changes, per-interval port records) and condenses them into a
RunReport: four CSV time series plus a structured summary. Transient
behavior is excluded from summary statistics by a steady-state window
(final half of the run by default).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .cells import CELL_SIZE_BITS, Cell


def fairness_index(allocations: list[float]) -> float:
    """Jain index (sum x)^2 / (n * sum x^2); 1.0 means perfectly equal."""
    if not allocations:
        raise ValueError("fairness_index requires a nonempty allocation list")
    if any(x < 0 for x in allocations):
        raise ValueError("allocations must be non-negative")
    sq = sum(x * x for x in allocations)
    if sq == 0:
        raise ValueError("fairness_index undefined for all-zero allocations")
    s = sum(allocations)
    return (s * s) / (len(allocations) * sq)


def clr(dropped: int, sent: int) -> float | None:
    """Cell loss ratio; absent (None) when nothing was sent."""
    if sent == 0:
        return None
    return dropped / sent


class CtdAccumulator:
    """Running cell-transfer-delay stats: mean, max and 2-point CDV."""

    def __init__(self):
        self.count = 0
        self.total = 0.0
        self.max_ctd: float | None = None
        self.min_ctd: float | None = None

    def record(self, delay: float) -> None:
        if delay < 0:
            raise AssertionError(f"negative transfer delay {delay}")
        self.count += 1
        self.total += delay
        self.max_ctd = delay if self.max_ctd is None else max(self.max_ctd, delay)
        self.min_ctd = delay if self.min_ctd is None else min(self.min_ctd, delay)

    @property
    def mean_ctd(self) -> float | None:
        return self.total / self.count if self.count else None

    @property
    def cdv_p2p(self) -> float | None:
        if self.count == 0:
            return None
        return self.max_ctd - self.min_ctd


@dataclass
class VcStats:
    created: int = 0
    sent_clp0: int = 0
    sent_all: int = 0
    delivered: int = 0
    delivered_data: int = 0
    delivered_data_steady: int = 0
    dropped_clp0: int = 0
    dropped_all: int = 0
    ctd: CtdAccumulator = field(default_factory=CtdAccumulator)
    ctd_steady: CtdAccumulator = field(default_factory=CtdAccumulator)
    acr_steps: list[tuple[float, float]] = field(default_factory=list)


class MetricsCollector:
    def __init__(self, duration: float, steady_state_fraction: float = 0.5):
        self.duration = duration
        self.steady_start = duration * (1.0 - steady_state_fraction)
        self.vc: dict[int, VcStats] = {}
        self.acr_series: list[tuple[float, int, float, str]] = []
        self.erica_series: list[dict] = []
        self.util_series: list[tuple[float, str, float]] = []
        self.queue_series: list[tuple[float, str, int, int, int, int]] = []
        self.port_drops: dict[str, list[int]] = {}
        self.created = 0
        self.delivered = 0
        self.dropped = 0

    def _vc(self, vc: int) -> VcStats:
        if vc not in self.vc:
            self.vc[vc] = VcStats()
        return self.vc[vc]

    # -- engine hooks --------------------------------------------------------

    def on_created(self, now: float, cell: Cell) -> None:
        st = self._vc(cell.vc)
        st.created += 1
        st.sent_all += 1
        if not cell.clp:
            st.sent_clp0 += 1
        self.created += 1

    def on_delivered(self, now: float, cell: Cell, is_data: bool) -> None:
        st = self._vc(cell.vc)
        st.delivered += 1
        self.delivered += 1
        if is_data:
            st.delivered_data += 1
            delay = now - cell.created_at
            st.ctd.record(delay)
            if now >= self.steady_start:
                st.delivered_data_steady += 1
                st.ctd_steady.record(delay)

    def on_dropped(self, now: float, cell: Cell, where: str, reason: str) -> None:
        st = self._vc(cell.vc)
        st.dropped_all += 1
        if not cell.clp:
            st.dropped_clp0 += 1
        self.dropped += 1
        if where not in self.port_drops:
            self.port_drops[where] = [0, 0]
        self.port_drops[where][1] += 1
        if not cell.clp:
            self.port_drops[where][0] += 1

    def acr_row(self, now: float, vc: int, acr: float, trigger: str) -> None:
        self.acr_series.append((now, vc, acr, trigger))
        self._vc(vc).acr_steps.append((now, acr))

    def erica_row(self, record: dict) -> None:
        self.erica_series.append(record)

    def util_row(self, now: float, port: str, util: float) -> None:
        self.util_series.append((now, port, util))

    def queue_row(self, now: float, port: str, level: int, qlen: int,
                  drops_clp0: int, drops_all: int) -> None:
        self.queue_series.append((now, port, level, qlen, drops_clp0, drops_all))

    # -- windowed views --------------------------------------------------------

    def acr_values_in_window(self, vc: int, t0: float, t1: float) -> list[float]:
        """ACR values in force at any instant of [t0, t1] (step function)."""
        steps = self.vc[vc].acr_steps if vc in self.vc else []
        current = None
        changes = []
        for t, v in steps:
            if t <= t0:
                current = v
            elif t <= t1:
                changes.append(v)
            else:
                break
        head = [current] if current is not None else []
        return head + changes

    def steady_mean_acr(self, vc: int) -> float | None:
        """Time-weighted mean ACR over the steady-state window."""
        return self.mean_acr_over(vc, self.steady_start, self.duration)

    def mean_acr_over(self, vc: int, t0: float, t1: float) -> float | None:
        steps = self.vc[vc].acr_steps if vc in self.vc else []
        if not steps or t1 <= t0:
            return None
        total = 0.0
        current = None
        last_t = t0
        for t, v in steps:
            if t <= t0:
                current = v
                continue
            if t >= t1:
                break
            if current is not None:
                total += current * (t - last_t)
            last_t = t
            current = v
        if current is None:
            return None
        total += current * (t1 - last_t)
        return total / (t1 - t0)

    def steady_utilization(self, port: str) -> float | None:
        vals = [u for (t, p, u) in self.util_series
                if p == port and t > self.steady_start]
        if not vals:
            return None
        return sum(vals) / len(vals)


@dataclass
class RunReport:
    scenario_name: str
    seed: int
    duration: float
    metrics: MetricsCollector
    in_flight: int
    invariant_violations: list[str]
    abr_vcs: list[int]
    misroutes: int = 0

    @property
    def conservation(self) -> dict:
        m = self.metrics
        return {
            "created": m.created,
            "delivered": m.delivered,
            "dropped": m.dropped,
            "in_flight": m.created - m.delivered - m.dropped,
            "in_flight_audit": self.in_flight,
        }

    def steady_fairness(self) -> float | None:
        allocs = []
        for vc in self.abr_vcs:
            mean = self.metrics.steady_mean_acr(vc)
            if mean is not None:
                allocs.append(mean)
        if not allocs or all(a == 0 for a in allocs):
            return None
        return fairness_index(allocs)

    def summary(self) -> dict:
        m = self.metrics
        per_vc = {}
        for vc in sorted(m.vc):
            st = m.vc[vc]
            steady_window = self.duration - m.steady_start
            per_vc[str(vc)] = {
                "created": st.created,
                "delivered_data": st.delivered_data,
                "sent_clp0": st.sent_clp0,
                "sent_all": st.sent_all,
                "dropped_clp0": st.dropped_clp0,
                "dropped_all": st.dropped_all,
                "clr_clp0": clr(st.dropped_clp0, st.sent_clp0),
                "clr_clp0_plus_1": clr(st.dropped_all, st.sent_all),
                "mean_ctd": st.ctd_steady.mean_ctd,
                "max_ctd": st.ctd_steady.max_ctd,
                "cdv_p2p": st.ctd_steady.cdv_p2p,
                "steady_mean_acr": m.steady_mean_acr(vc) if vc in self.abr_vcs else None,
                "steady_throughput": st.delivered_data_steady / steady_window
                if steady_window > 0 else None,
            }
        per_port = {}
        ports = sorted({p for (_, p, _) in m.util_series} | set(m.port_drops))
        for p in ports:
            drops = m.port_drops.get(p, [0, 0])
            per_port[p] = {
                "drops_clp0": drops[0],
                "drops_all": drops[1],
                "steady_utilization": m.steady_utilization(p),
            }
        return {
            "scenario": self.scenario_name,
            "seed": self.seed,
            "duration": self.duration,
            "steady_window_start": m.steady_start,
            "conservation": self.conservation,
            "fairness_index_steady_acr": self.steady_fairness(),
            "per_vc": per_vc,
            "per_port": per_port,
            "misroutes": self.misroutes,
            "invariant_violations": self.invariant_violations,
        }

    # -- serialization ---------------------------------------------------------

    def write(self, outdir: str | Path) -> None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(
            json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        m = self.metrics
        _write_csv(out / "acr.csv", "time,vc,acr,trigger",
                   ((t, vc, _f(a), trig) for (t, vc, a, trig) in m.acr_series))
        _write_csv(out / "erica.csv",
                   "time,port,z,n_active,fair_share,target_abr_capacity,abr_input_rate",
                   ((r["time"], r["port"], _f(r["z"]), r["n_active"],
                     _f(r["fair_share"]), _f(r["target_abr_capacity"]),
                     _f(r["abr_input_rate"])) for r in m.erica_series))
        _write_csv(out / "queue.csv",
                   "time,port,qos_level,queue_len,drops_clp0,drops_all",
                   m.queue_series)
        _write_csv(out / "utilization.csv", "time,port,utilization",
                   ((t, p, _f(u)) for (t, p, u) in m.util_series))


def _f(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
