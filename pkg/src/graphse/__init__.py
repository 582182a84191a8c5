"""Graph-parallel weighted-least-squares power system state estimation."""
from .case_io import (
    MeasKind,
    Measurement,
    MeasurementSet,
    NetworkCase,
    parse_case,
    parse_measurements,
    write_case,
    write_measurements,
    write_report,
)
from .estimator import EstimationOptions, EstimationResult, estimate
from .fixtures import load_case
from .measurement import NoiseSigmas, SystemState, bind, generate_measurements, truth_state
from .network import PowerGraph, build_graph

__all__ = [
    "EstimationOptions",
    "EstimationResult",
    "MeasKind",
    "Measurement",
    "MeasurementSet",
    "NetworkCase",
    "NoiseSigmas",
    "PowerGraph",
    "SystemState",
    "bind",
    "build_graph",
    "estimate",
    "generate_measurements",
    "load_case",
    "parse_case",
    "parse_measurements",
    "truth_state",
    "write_case",
    "write_measurements",
    "write_report",
]
