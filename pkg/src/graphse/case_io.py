"""Plain-text readers and writers for network cases, measurement sets and reports.

Case file layout::

    # comment
    BASE_MVA 100
    ANGLE_UNIT deg          # optional, default rad
    BUS
    # id  type   v_true  theta_true  gs   bs
    1     slack  1.06    0.0         0    0
    BRANCH
    # from  to  r        x        b_charging  tap
    1       2   0.01938  0.05917  0.0528      1.0

Measurement file layout (one record per line)::

    # KIND LOCATION VALUE SIGMA2
    V  1     1.06    1.6e-05
    PF 1-2   1.5688  6.4e-05
    PF 49-54#2 0.47  6.4e-05

``LOCATION`` is a bus id, or ``from-to`` for flows measured at the ``from``
end.  ``#k`` selects the k-th parallel circuit between the two buses (file
order, 1-based); it is omitted for the first circuit.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Iterable

if TYPE_CHECKING:
    from .estimator import EstimationResult


class CaseError(ValueError):
    """Base class for malformed input files. ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class CaseSyntaxError(CaseError):
    pass


class DuplicateBusError(CaseError):
    pass


class SlackBusError(CaseError):
    """No slack bus, or more than one."""


class DanglingBranchError(CaseError):
    pass


class MeasurementFormatError(CaseError):
    pass


class UnknownKindError(MeasurementFormatError):
    pass


class VarianceError(MeasurementFormatError):
    pass


class LocationError(MeasurementFormatError):
    """A measurement location that does not exist in the network."""


BUS_TYPES = ("slack", "pv", "pq")


@dataclass(frozen=True)
class RawBus:
    id: int
    bus_type: str
    v_true: float
    theta_true: float
    gs: float = 0.0
    bs: float = 0.0


@dataclass(frozen=True)
class RawBranch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap: float = 1.0


@dataclass(frozen=True)
class NetworkCase:
    base_mva: float
    buses: tuple[RawBus, ...]
    branches: tuple[RawBranch, ...]
    name: str = field(default="", compare=False)

    @property
    def slack(self) -> RawBus:
        return next(b for b in self.buses if b.bus_type == "slack")


# -- case files ---------------------------------------------------------------


def _tokens(text: str) -> Iterable[tuple[int, list[str]]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            yield lineno, body.split()


def _float(tok: str, lineno: int, what: str) -> float:
    try:
        val = float(tok)
    except ValueError:
        raise CaseSyntaxError(f"bad {what} {tok!r}", lineno) from None
    if not math.isfinite(val):
        raise CaseSyntaxError(f"non-finite {what} {tok!r}", lineno)
    return val


def _int(tok: str, lineno: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise CaseSyntaxError(f"bad {what} {tok!r}", lineno) from None


def parse_case(text: str, name: str = "") -> NetworkCase:
    base_mva = None
    angle_scale = 1.0
    section = None
    section_line = 0
    buses: list[RawBus] = []
    bus_lines: dict[int, int] = {}
    branches: list[tuple[int, RawBranch]] = []

    for lineno, tok in _tokens(text):
        head = tok[0].upper()
        if head in ("BUS", "BRANCH") and len(tok) == 1:
            section, section_line = head, lineno
            continue
        if head == "BASE_MVA":
            if len(tok) != 2:
                raise CaseSyntaxError("BASE_MVA takes one value", lineno)
            base_mva = _float(tok[1], lineno, "base_mva")
            if base_mva <= 0:
                raise CaseSyntaxError("base_mva must be positive", lineno)
            continue
        if head == "ANGLE_UNIT":
            if len(tok) != 2 or tok[1].lower() not in ("deg", "rad"):
                raise CaseSyntaxError("ANGLE_UNIT must be 'deg' or 'rad'", lineno)
            angle_scale = math.pi / 180.0 if tok[1].lower() == "deg" else 1.0
            continue

        if section == "BUS":
            if len(tok) != 6:
                raise CaseSyntaxError(f"bus record needs 6 fields, got {len(tok)}", lineno)
            bus_id = _int(tok[0], lineno, "bus id")
            bus_type = tok[1].lower()
            if bus_type not in BUS_TYPES:
                raise CaseSyntaxError(f"unknown bus type {tok[1]!r}", lineno)
            v, theta, gs, bs = (_float(t, lineno, "bus value") for t in tok[2:])
            if v <= 0:
                raise CaseSyntaxError("v_true must be positive", lineno)
            if bus_id in bus_lines:
                raise DuplicateBusError(
                    f"bus {bus_id} already defined on line {bus_lines[bus_id]}", lineno
                )
            bus_lines[bus_id] = lineno
            buses.append(RawBus(bus_id, bus_type, v, theta * angle_scale, gs, bs))
        elif section == "BRANCH":
            if len(tok) != 6:
                raise CaseSyntaxError(f"branch record needs 6 fields, got {len(tok)}", lineno)
            f, t = _int(tok[0], lineno, "from bus"), _int(tok[1], lineno, "to bus")
            r, x, b, tap = (_float(v, lineno, "branch value") for v in tok[2:])
            if r == 0.0 and x == 0.0:
                raise CaseSyntaxError("branch impedance is zero", lineno)
            if tap <= 0:
                raise CaseSyntaxError("tap ratio must be positive", lineno)
            if f == t:
                raise CaseSyntaxError("branch connects a bus to itself", lineno)
            branches.append((lineno, RawBranch(f, t, r, x, b, tap)))
        else:
            raise CaseSyntaxError(f"record outside BUS/BRANCH section: {tok[0]!r}", lineno)

    if base_mva is None:
        raise CaseSyntaxError("missing BASE_MVA", 1)
    n_slack = sum(b.bus_type == "slack" for b in buses)
    if n_slack != 1:
        raise SlackBusError(f"expected exactly one slack bus, found {n_slack}", section_line or 1)
    for lineno, br in branches:
        for end in (br.from_bus, br.to_bus):
            if end not in bus_lines:
                raise DanglingBranchError(f"branch references unknown bus {end}", lineno)
    return NetworkCase(base_mva, tuple(buses), tuple(br for _, br in branches), name)


def _num(x) -> str:
    return repr(float(x))


def write_case(case: NetworkCase) -> str:
    out = []
    if case.name:
        out.append(f"# {case.name}")
    out.append(f"BASE_MVA {_num(case.base_mva)}")
    out.append("ANGLE_UNIT rad")
    out.append("BUS")
    out.append("# id type v_true theta_true gs bs")
    for b in case.buses:
        out.append(f"{b.id} {b.bus_type} {_num(b.v_true)} {_num(b.theta_true)} {_num(b.gs)} {_num(b.bs)}")
    out.append("BRANCH")
    out.append("# from to r x b_charging tap")
    for br in case.branches:
        out.append(
            f"{br.from_bus} {br.to_bus} {_num(br.r)} {_num(br.x)} {_num(br.b_charging)} {_num(br.tap)}"
        )
    return "\n".join(out) + "\n"


def case_from_matpower(base_mva, bus, branch, name: str = "") -> NetworkCase:
    """Convert MATPOWER-style ``bus``/``branch`` row arrays.

    Shunts are divided by ``base_mva``, a zero tap becomes 1.0, out-of-service
    branches are dropped and angles are shifted so the slack angle is zero.
    Phase-shift angles are not supported.
    """
    bus_type = {1: "pq", 2: "pv", 3: "slack"}
    slack_va = next(float(row[8]) for row in bus if int(row[1]) == 3)
    buses = tuple(
        RawBus(
            int(row[0]),
            bus_type[int(row[1])],
            float(row[7]),
            math.radians(float(row[8]) - slack_va),
            float(row[4]) / base_mva,
            float(row[5]) / base_mva,
        )
        for row in bus
    )
    branches = []
    for row in branch:
        if len(row) > 10 and float(row[10]) == 0:
            continue
        if len(row) > 9 and float(row[9]) != 0:
            raise ValueError("phase-shifting transformers are not supported")
        tap = float(row[8]) or 1.0
        branches.append(
            RawBranch(int(row[0]), int(row[1]), float(row[2]), float(row[3]), float(row[4]), tap)
        )
    return NetworkCase(float(base_mva), buses, tuple(branches), name)


# -- measurement files -------------------------------------------------------


class MeasKind(Enum):
    voltage = "V"
    p_injection = "PI"
    q_injection = "QI"
    p_flow = "PF"
    q_flow = "QF"

    @property
    def is_flow(self) -> bool:
        return self in (MeasKind.p_flow, MeasKind.q_flow)


@dataclass(frozen=True)
class Measurement:
    """One measured quantity addressed by external bus ids.

    ``location`` is ``(bus,)`` for voltages and injections and
    ``(from_bus, to_bus, circuit)`` for flows.
    """

    kind: MeasKind
    location: tuple[int, ...]
    value: float
    sigma2: float
    line: int | None = field(default=None, compare=False, repr=False)

    @property
    def location_text(self) -> str:
        if not self.kind.is_flow:
            return str(self.location[0])
        f, t, ckt = self.location
        return f"{f}-{t}" if ckt == 1 else f"{f}-{t}#{ckt}"


@dataclass(frozen=True)
class MeasurementSet:
    measurements: tuple[Measurement, ...] = ()

    def __len__(self) -> int:
        return len(self.measurements)

    def __iter__(self):
        return iter(self.measurements)


MEASUREMENT_HEADER = "# KIND LOCATION VALUE SIGMA2"


def _parse_location(kind: MeasKind, tok: str, lineno: int) -> tuple[int, ...]:
    try:
        if not kind.is_flow:
            return (int(tok),)
        ends, _, ckt = tok.partition("#")
        f, t = ends.split("-")
        circuit = int(ckt) if ckt else 1
    except ValueError:
        raise LocationError(f"bad {kind.value} location {tok!r}", lineno) from None
    if circuit < 1:
        raise LocationError(f"circuit number must be >= 1 in {tok!r}", lineno)
    return (int(f), int(t), circuit)


def parse_measurements(text: str) -> MeasurementSet:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.strip()
        if not body or body.startswith("#"):
            continue
        tok = body.split()
        if len(tok) != 4:
            raise MeasurementFormatError(f"expected 4 fields, got {len(tok)}", lineno)
        try:
            kind = MeasKind(tok[0].upper())
        except ValueError:
            raise UnknownKindError(f"unknown measurement kind {tok[0]!r}", lineno) from None
        location = _parse_location(kind, tok[1], lineno)
        try:
            value, sigma2 = float(tok[2]), float(tok[3])
        except ValueError:
            raise MeasurementFormatError("value and variance must be numbers", lineno) from None
        if not math.isfinite(value):
            raise MeasurementFormatError("non-finite measurement value", lineno)
        if not sigma2 > 0 or not math.isfinite(sigma2):
            raise VarianceError(f"variance must be positive, got {tok[3]}", lineno)
        out.append(Measurement(kind, location, value, sigma2, lineno))
    return MeasurementSet(tuple(out))


def write_measurements(mset: MeasurementSet) -> str:
    lines = [MEASUREMENT_HEADER]
    for m in mset:
        lines.append(f"{m.kind.value} {m.location_text} {_num(m.value)} {_num(m.sigma2)}")
    return "\n".join(lines) + "\n"


# -- reports -----------------------------------------------------------------

TIMING_KEYS = (
    "gain_formulation",
    "factorization",
    "residual_and_substitution_per_iter",
    "rhs_per_iter",
    "total",
)

_NUMBER = {"type": "number"}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": [
        "mode",
        "iterations",
        "converged",
        "mse",
        "objective",
        "max_abs_voltage_residual",
        "timings_ms",
    ],
    "properties": {
        "case": {"type": "string"},
        "mode": {"enum": ["full_newton", "fast_decoupled"]},
        "workers": {"type": "integer", "minimum": 1},
        "iterations": {"type": "integer", "minimum": 0},
        "converged": {"type": "boolean"},
        "mse": {"type": "number", "minimum": 0},
        "objective": {"type": "number", "minimum": 0},
        "objective_initial": _NUMBER,
        "max_abs_voltage_residual": {"type": "number", "minimum": 0},
        "measurements": {"type": "integer", "minimum": 0},
        "states": {"type": "integer", "minimum": 0},
        "factorizations": {"type": "object", "additionalProperties": {"type": "integer"}},
        "timings_ms": {
            "type": "object",
            "required": list(TIMING_KEYS),
            "properties": {k: {"type": "number", "minimum": 0} for k in TIMING_KEYS},
            "additionalProperties": False,
        },
    },
}

BENCH_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["case", "seed", "deterministic", "runs", "levels"],
    "properties": {
        "case": {"type": "string"},
        "seed": {"type": "integer"},
        "deterministic": {"type": "boolean"},
        "runs": {"type": "array", "items": REPORT_SCHEMA},
        "levels": {"type": "object"},
    },
}


def report_dict(result: EstimationResult, **extra) -> dict:
    doc = {
        "mode": result.mode,
        "iterations": result.iterations,
        "converged": result.converged,
        "mse": result.mse,
        "objective": result.objective,
        "objective_initial": result.objective_initial,
        "max_abs_voltage_residual": result.max_abs_voltage_residual,
        "measurements": result.n_measurements,
        "states": result.n_states,
        "factorizations": dict(result.factorizations),
        "timings_ms": result.timings.as_dict(),
    }
    doc.update(extra)
    return doc


def write_report(result: EstimationResult, **extra) -> str:
    return json.dumps(report_dict(result, **extra), indent=2) + "\n"
