"""Scenario configuration: schema, validation, builtin templates.

A scenario is a nested key-value file (YAML) describing the N-source
reference topology, per-VC ABR parameters, ERICA and switch settings,
background traffic and run controls. Builtin templates ship with the
package and can be addressed by bare name from the CLI.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .cells import AbrParams, BufferConfig
from .switch import FeedbackScheme

BUILTIN_NAMES = ("n_source", "n_source_vbr_background", "vsvd_chain", "binary_efci")


class ScenarioError(Exception):
    """Configuration rejected; the message names the offending field."""


@dataclass
class TopologyConfig:
    n_sources: int = 5
    bottleneck_rate: float = 1000.0  # cells/s
    access_rate: float = 1000.0  # cells/s
    prop_delay: float = 0.001  # seconds, each link


@dataclass
class SourceConfig:
    index: int
    demand: float | str = "greedy"  # 'greedy' or cells/s
    start_time: float = 0.0


@dataclass
class EricaConfig:
    target_fraction: float = 0.9
    delta: float = 0.1
    averaging_interval: float | None = None  # None: 100 cell slots of the link


@dataclass
class SwitchConfig:
    feedback_scheme: FeedbackScheme = FeedbackScheme.EXPLICIT_RATE
    vsvd: bool = False
    fabric_delay: float | None = None  # None: 4 cell times of the fastest port
    efci_to_ci: bool = True
    efci_threshold: int | None = None  # None: half the ABR buffer capacity
    ci_threshold: int | None = None  # None: 0.8 * ABR buffer capacity
    ni_threshold: int | None = None  # None: 0.4 * ABR buffer capacity
    buffers: list[BufferConfig] = field(default_factory=lambda: [
        BufferConfig(qos_level=0, capacity=200),
        BufferConfig(qos_level=1, capacity=1000),
    ])
    abr_qos_level: int = 1


@dataclass
class BackgroundConfig:
    category: str  # cbr | vbr | ubr
    pcr: float
    scr: float | None = None
    mbs: int | None = None
    qos_level: int = 0
    start_time: float = 0.0


@dataclass
class PolicingConfig:
    enabled: bool = False
    mode: str = "tag"  # tag | drop
    cdvt: float = 0.0


@dataclass
class Scenario:
    name: str
    duration: float
    seed: int
    topology: TopologyConfig
    abr: AbrParams
    sources: list[SourceConfig]
    erica: EricaConfig
    switch: SwitchConfig
    background: list[BackgroundConfig]
    policing: PolicingConfig
    steady_state_fraction: float = 0.5
    raw: dict = field(default_factory=dict, repr=False)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ScenarioError(message)


def _section(data: dict, key: str, allowed: set[str]) -> dict:
    sub = data.get(key) or {}
    _require(isinstance(sub, dict), f"{key}: expected a mapping")
    for k in sub:
        _require(k in allowed, f"{key}.{k}: unknown field")
    return sub


def from_dict(data: dict) -> Scenario:
    _require(isinstance(data, dict), "scenario: expected a mapping at top level")
    top_allowed = {"name", "description", "duration", "seed", "topology", "abr",
                   "sources", "erica", "switch", "background", "policing",
                   "telemetry"}
    for k in data:
        _require(k in top_allowed, f"{k}: unknown top-level field")

    name = data.get("name", "scenario")
    duration = float(data.get("duration", 30.0))
    _require(duration > 0, "duration: must be positive")
    seed = int(data.get("seed", 1))

    topo_d = _section(data, "topology",
                      {"n_sources", "bottleneck_rate", "access_rate", "prop_delay"})
    topology = TopologyConfig(
        n_sources=int(topo_d.get("n_sources", 5)),
        bottleneck_rate=float(topo_d.get("bottleneck_rate", 1000.0)),
        access_rate=float(topo_d.get("access_rate", 1000.0)),
        prop_delay=float(topo_d.get("prop_delay", 0.001)),
    )
    _require(topology.n_sources >= 1, "topology.n_sources: must be at least 1")
    _require(topology.bottleneck_rate > 0, "topology.bottleneck_rate: must be positive")
    _require(topology.access_rate > 0, "topology.access_rate: must be positive")
    _require(topology.prop_delay >= 0, "topology.prop_delay: must be non-negative")

    abr_d = _section(data, "abr", {"pcr", "mcr", "icr", "nrm", "rif", "rdf", "adtf"})
    try:
        abr = AbrParams(
            pcr=float(abr_d.get("pcr", topology.access_rate)),
            mcr=float(abr_d.get("mcr", 0.0)),
            icr=float(abr_d["icr"]) if "icr" in abr_d and abr_d["icr"] is not None else None,
            nrm=int(abr_d.get("nrm", 32)),
            rif=float(abr_d.get("rif", 1.0 / 16.0)),
            rdf=float(abr_d.get("rdf", 1.0 / 16.0)),
            adtf=float(abr_d.get("adtf", 0.5)),
        )
    except ValueError as exc:
        raise ScenarioError(f"abr: {exc}") from exc
    _require(abr.pcr <= topology.access_rate + 1e-9,
             "abr.pcr: must not exceed topology.access_rate")

    src_d = _section(data, "sources", {"defaults", "overrides"})
    defaults = src_d.get("defaults") or {}
    _require(isinstance(defaults, dict), "sources.defaults: expected a mapping")
    for k in defaults:
        _require(k in {"demand", "start_time"}, f"sources.defaults.{k}: unknown field")
    sources = [SourceConfig(index=i,
                            demand=defaults.get("demand", "greedy"),
                            start_time=float(defaults.get("start_time", 0.0)))
               for i in range(topology.n_sources)]
    for ov in src_d.get("overrides") or []:
        _require(isinstance(ov, dict) and "index" in ov,
                 "sources.overrides: each entry needs an index")
        for k in ov:
            _require(k in {"index", "demand", "start_time"},
                     f"sources.overrides.{k}: unknown field")
        idx = int(ov["index"])
        _require(0 <= idx < topology.n_sources,
                 f"sources.overrides.index: {idx} out of range")
        if "demand" in ov:
            sources[idx].demand = ov["demand"]
        if "start_time" in ov:
            sources[idx].start_time = float(ov["start_time"])
    for s in sources:
        if s.demand != "greedy":
            try:
                s.demand = float(s.demand)
            except (TypeError, ValueError):
                raise ScenarioError(
                    f"sources[{s.index}].demand: must be 'greedy' or a rate") from None
            _require(s.demand > 0, f"sources[{s.index}].demand: must be positive")
        _require(s.start_time >= 0, f"sources[{s.index}].start_time: must be >= 0")

    erica_d = _section(data, "erica", {"target_fraction", "delta", "averaging_interval"})
    erica = EricaConfig(
        target_fraction=float(erica_d.get("target_fraction", 0.9)),
        delta=float(erica_d.get("delta", 0.1)),
        averaging_interval=(float(erica_d["averaging_interval"])
                            if erica_d.get("averaging_interval") is not None else None),
    )
    _require(0 < erica.target_fraction <= 1.0,
             "erica.target_fraction: must lie in (0, 1]")
    _require(erica.delta >= 0, "erica.delta: must be non-negative")
    if erica.averaging_interval is not None:
        _require(erica.averaging_interval > 0,
                 "erica.averaging_interval: must be positive")

    sw_d = _section(data, "switch",
                    {"feedback_scheme", "vsvd", "fabric_delay", "efci_to_ci",
                     "efci_threshold", "ci_threshold", "ni_threshold",
                     "buffers", "abr_qos_level"})
    scheme_name = sw_d.get("feedback_scheme", "explicit_rate")
    try:
        scheme = FeedbackScheme(scheme_name)
    except ValueError:
        raise ScenarioError(
            f"switch.feedback_scheme: unknown scheme {scheme_name!r}") from None
    _require(scheme is not FeedbackScheme.NONE,
             "switch.feedback_scheme: 'none' is reserved for end-systems")
    buffers = []
    for i, b in enumerate(sw_d.get("buffers") or
                          [{"qos_level": 0, "capacity": 200},
                           {"qos_level": 1, "capacity": 1000}]):
        _require(isinstance(b, dict), f"switch.buffers[{i}]: expected a mapping")
        for k in b:
            _require(k in {"qos_level", "capacity", "min_bw", "max_bw"},
                     f"switch.buffers[{i}].{k}: unknown field")
        try:
            buffers.append(BufferConfig(
                qos_level=int(b.get("qos_level", i)),
                capacity=int(b.get("capacity", 1000)),
                min_bw=float(b.get("min_bw", 0.0)),
                max_bw=float(b["max_bw"]) if b.get("max_bw") is not None else None,
            ))
        except ValueError as exc:
            raise ScenarioError(f"switch.buffers[{i}]: {exc}") from exc
    switch = SwitchConfig(
        feedback_scheme=scheme,
        vsvd=bool(sw_d.get("vsvd", False)),
        fabric_delay=(float(sw_d["fabric_delay"])
                      if sw_d.get("fabric_delay") is not None else None),
        efci_to_ci=bool(sw_d.get("efci_to_ci", True)),
        efci_threshold=(int(sw_d["efci_threshold"])
                        if sw_d.get("efci_threshold") is not None else None),
        ci_threshold=(int(sw_d["ci_threshold"])
                      if sw_d.get("ci_threshold") is not None else None),
        ni_threshold=(int(sw_d["ni_threshold"])
                      if sw_d.get("ni_threshold") is not None else None),
        buffers=buffers,
        abr_qos_level=int(sw_d.get("abr_qos_level", max(b.qos_level for b in buffers))),
    )
    _require(any(b.qos_level == switch.abr_qos_level for b in switch.buffers),
             "switch.abr_qos_level: no buffer carries that level")
    if switch.ci_threshold is not None and switch.ni_threshold is not None:
        _require(switch.ci_threshold > switch.ni_threshold,
                 "switch.ci_threshold: must exceed switch.ni_threshold")

    background = []
    for i, g in enumerate(data.get("background") or []):
        _require(isinstance(g, dict), f"background[{i}]: expected a mapping")
        for k in g:
            _require(k in {"category", "pcr", "scr", "mbs", "qos_level", "start_time"},
                     f"background[{i}].{k}: unknown field")
        category = str(g.get("category", "cbr")).lower()
        _require(category in {"cbr", "vbr", "ubr"},
                 f"background[{i}].category: must be cbr, vbr or ubr")
        cfg = BackgroundConfig(
            category=category,
            pcr=float(g.get("pcr", 0.0)),
            scr=float(g["scr"]) if g.get("scr") is not None else None,
            mbs=int(g["mbs"]) if g.get("mbs") is not None else None,
            qos_level=int(g.get("qos_level", 0)),
            start_time=float(g.get("start_time", 0.0)),
        )
        _require(cfg.pcr > 0, f"background[{i}].pcr: must be positive")
        _require(cfg.pcr <= topology.access_rate + 1e-9,
                 f"background[{i}].pcr: must not exceed topology.access_rate")
        if cfg.category == "vbr":
            _require(cfg.scr is not None and cfg.mbs is not None,
                     f"background[{i}]: vbr requires scr and mbs")
            _require(0 < cfg.scr <= cfg.pcr,
                     f"background[{i}].scr: must lie in (0, pcr]")
            _require(cfg.mbs >= 1, f"background[{i}].mbs: must be at least 1")
        _require(any(b.qos_level == cfg.qos_level for b in switch.buffers),
                 f"background[{i}].qos_level: no buffer carries that level")
        background.append(cfg)

    pol_d = _section(data, "policing", {"enabled", "mode", "cdvt"})
    policing = PolicingConfig(
        enabled=bool(pol_d.get("enabled", False)),
        mode=str(pol_d.get("mode", "tag")),
        cdvt=float(pol_d.get("cdvt", 0.0)),
    )
    _require(policing.mode in {"tag", "drop"}, "policing.mode: must be tag or drop")
    _require(policing.cdvt >= 0, "policing.cdvt: must be non-negative")

    tel_d = _section(data, "telemetry", {"steady_state_fraction"})
    steady = float(tel_d.get("steady_state_fraction", 0.5))
    _require(0 < steady <= 1.0, "telemetry.steady_state_fraction: must lie in (0, 1]")

    return Scenario(name=name, duration=duration, seed=seed, topology=topology,
                    abr=abr, sources=sources, erica=erica, switch=switch,
                    background=background, policing=policing,
                    steady_state_fraction=steady, raw=copy.deepcopy(data))


def builtin_text(name: str) -> str:
    return (resources.files("abrsim") / "scenarios" / f"{name}.yaml").read_text()


def load(path_or_name: str) -> Scenario:
    """Load a scenario from a file path or a builtin template name."""
    p = Path(path_or_name)
    if p.exists():
        text = p.read_text()
    elif path_or_name in BUILTIN_NAMES:
        text = builtin_text(path_or_name)
    else:
        raise ScenarioError(
            f"scenario not found: {path_or_name!r} is neither a file nor one of "
            f"the builtin templates {', '.join(BUILTIN_NAMES)}")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario {path_or_name}: invalid YAML ({exc})") from exc
    return from_dict(data or {})


def set_by_path(data: dict, dotted: str, value) -> None:
    """Overwrite one scenario field addressed as e.g. topology.n_sources.

    The path must already exist: sweeps may only vary real fields.
    """
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ScenarioError(f"sweep field {dotted!r}: no such scenario field")
        node = node[k]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ScenarioError(f"sweep field {dotted!r}: no such scenario field")
    node[keys[-1]] = value
