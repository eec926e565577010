"""Sequential localization of line anomalies in power grids from phase-angle readings."""

from .case_io import CaseError, RawCase, load_case, parse_matpower_case, parse_native_case, serialize_native
from .decision import calibrate_threshold, omp_localize, stop_or_continue, whiten
from .engine import RunConfig, SweepConfig, TrialRecord, run_accuracy_sweep, run_baseline_prespecified, run_trial
from .grid_model import GmrfModel, build_model, build_topology, model_from_case
from .scenario import EventSet, enumerate_events, event_model, sample_measurement_state
from .selection import select_initial, select_next

__version__ = "0.1.0"

__all__ = [
    "CaseError",
    "EventSet",
    "GmrfModel",
    "RawCase",
    "RunConfig",
    "SweepConfig",
    "TrialRecord",
    "build_model",
    "build_topology",
    "calibrate_threshold",
    "enumerate_events",
    "event_model",
    "load_case",
    "model_from_case",
    "omp_localize",
    "parse_matpower_case",
    "parse_native_case",
    "run_accuracy_sweep",
    "run_baseline_prespecified",
    "run_trial",
    "sample_measurement_state",
    "select_initial",
    "select_next",
    "serialize_native",
    "stop_or_continue",
    "whiten",
]
