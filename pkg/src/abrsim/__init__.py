"""abrsim: deterministic discrete-event simulation of ATM ABR traffic
management with ERICA explicit-rate feedback and GCRA policing."""

from .cells import (AbrParams, BufferConfig, Cell, CellKind, ClrStream,
                    QosParams, RmDirection, RmPayload, ServiceCategory,
                    TrafficContract, make_frm, turn_around)
from .engine import Simulation, build_n_source, run
from .erica import EricaPortState
from .gcra import (DualPolicer, GcraState, PoliceMode, PoliceOutcome, Verdict,
                   burst_tolerance, check_sequence, gcra_new, police)
from .metrics import RunReport, clr, fairness_index
from .scenario import Scenario, ScenarioError, load
from .switch import FeedbackScheme, SwitchProcess

__version__ = "0.1.0"
