"""Domain vocabulary: cells, RM payloads, contracts and QoS descriptors.

Everything here is a plain value type shared by the rest of the simulator.
Rates are cells/second throughout; link bit-rates convert at 424 bits per
cell (53 bytes).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

CELL_SIZE_BITS = 424  # 53 bytes * 8, fixed ATM cell size


class CellKind(Enum):
    DATA = "data"
    RM = "rm"


class RmDirection(Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


class ServiceCategory(Enum):
    CBR = "cbr"
    VBR_RT = "vbr_rt"
    VBR_NRT = "vbr_nrt"
    ABR = "abr"
    UBR = "ubr"


class ClrStream(Enum):
    """Loss accounting stream: untagged cells only, or the aggregate."""

    CLP0 = "clp0"
    CLP0_PLUS_1 = "clp0+1"


@dataclass
class RmPayload:
    """Feedback carrier inside an RM cell.

    dir flips exactly once per loop traversal: Forward at the source,
    Backward after destination turnaround.
    """

    dir: RmDirection
    ci: bool = False
    ni: bool = False
    er: float = 0.0  # explicit rate, cells/s
    ccr: float = 0.0  # current cell rate of the source, cells/s
    out_of_rate: bool = False

    def __post_init__(self):
        if self.er < 0 or self.ccr < 0:
            raise ValueError("RM rate fields must be non-negative")


@dataclass
class Cell:
    """One ATM cell: data or resource-management.

    Data cells always carry clp=0; out-of-rate RM cells always carry
    clp=1 (that is how the network recognises them as discardable).
    """

    vc: int
    kind: CellKind
    efci: bool = False
    clp: bool = False
    rm: RmPayload | None = None
    seq: int = 0
    created_at: float = 0.0
    size_bits: int = CELL_SIZE_BITS

    def __post_init__(self):
        if self.kind is CellKind.DATA:
            if self.rm is not None:
                raise ValueError("data cell cannot carry an RM payload")
        else:
            if self.rm is None:
                raise ValueError("RM cell requires an RM payload")
            if self.rm.out_of_rate and not self.clp:
                raise ValueError("out-of-rate RM cell must be tagged (clp=1)")
        if self.size_bits != CELL_SIZE_BITS:
            raise ValueError("ATM cells are fixed-size")

    @property
    def is_frm(self) -> bool:
        return self.kind is CellKind.RM and self.rm.dir is RmDirection.FORWARD

    @property
    def is_brm(self) -> bool:
        return self.kind is CellKind.RM and self.rm.dir is RmDirection.BACKWARD


@dataclass
class QosParams:
    """Negotiated QoS objectives. cer/secbr/cmr are carried, never computed."""

    max_ctd: float | None = None
    p2p_cdv: float | None = None
    clr_target: float | None = None
    clr_stream: ClrStream = ClrStream.CLP0_PLUS_1
    cer: float | None = None
    secbr: float | None = None
    cmr: float | None = None

    def __post_init__(self):
        for name in ("clr_target", "cer", "secbr", "cmr"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("max_ctd", "p2p_cdv"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class TrafficContract:
    category: ServiceCategory
    pcr: float
    scr: float | None = None
    mbs: int | None = None
    mcr: float = 0.0
    cdvt: float = 0.0
    qos: QosParams = field(default_factory=QosParams)

    def __post_init__(self):
        if not 0.0 <= self.mcr <= self.pcr:
            raise ValueError("contract requires 0 <= mcr <= pcr")
        if self.scr is not None and self.scr > self.pcr:
            raise ValueError("contract requires scr <= pcr")
        if self.mbs is not None and self.mbs < 1:
            raise ValueError("mbs must be at least 1 cell")
        if self.cdvt < 0:
            raise ValueError("cdvt must be non-negative")


@dataclass
class AbrParams:
    """The ABR operating subset used by the feedback loop."""

    pcr: float
    mcr: float = 0.0
    icr: float | None = None
    nrm: int = 32  # in-rate cells per FRM
    rif: float = 1.0 / 16.0
    rdf: float = 1.0 / 16.0
    adtf: float = 0.5  # idle time after which ACR falls back to ICR

    def __post_init__(self):
        if self.icr is None:
            self.icr = self.pcr / 10.0
        if not self.mcr <= self.icr <= self.pcr:
            raise ValueError("ABR params require mcr <= icr <= pcr")
        if self.nrm < 2:
            raise ValueError("nrm must be at least 2")
        for name in ("rif", "rdf"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.adtf <= 0:
            raise ValueError("adtf must be positive")


@dataclass
class BufferConfig:
    """One output-port queue: ordinal priority plus bandwidth bounds."""

    qos_level: int
    capacity: int
    min_bw: float = 0.0  # guaranteed rate, cells/s
    max_bw: float | None = None  # rate cap, cells/s; None = link rate

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("buffer capacity must be at least 1 cell")
        if self.min_bw < 0:
            raise ValueError("min_bw must be non-negative")
        if self.max_bw is not None and self.max_bw < self.min_bw:
            raise ValueError("min_bw must not exceed max_bw")


def make_frm(vc: int, ccr: float, er_seed: float, seq: int = 0,
             created_at: float = 0.0, out_of_rate: bool = False) -> Cell:
    """Build a fresh forward RM cell as a source emits it.

    CI and NI start clear; the ER field starts at the caller's seed
    (conventionally the VC's PCR, since switches only ever reduce it).
    """
    if ccr < 0 or er_seed < 0:
        raise ValueError("ccr and er_seed must be non-negative")
    payload = RmPayload(dir=RmDirection.FORWARD, ci=False, ni=False,
                        er=er_seed, ccr=ccr, out_of_rate=out_of_rate)
    return Cell(vc=vc, kind=CellKind.RM, clp=out_of_rate, rm=payload,
                seq=seq, created_at=created_at)


def turn_around(frm: Cell, congested_hint: bool) -> Cell:
    """Destination turnaround: flip DIR, optionally latch CI.

    The hint is the EFCI bit of the last data cell seen before this FRM;
    when set, CI goes to 1 (binary-mode closure). All other payload
    fields pass through untouched.
    """
    if frm.kind is not CellKind.RM or frm.rm.dir is not RmDirection.FORWARD:
        raise ValueError("turn_around requires a forward RM cell")
    payload = replace(frm.rm, dir=RmDirection.BACKWARD,
                      ci=frm.rm.ci or congested_hint)
    return replace(frm, rm=payload)
