"""Power-network graph model: validation, file ingestion, matrix views.

The network file is JSON with a `buses` array and a `lines` array; the exact
schema is documented in the README. Parsing is strict: unknown fields are
rejected so typos fail loudly instead of silently defaulting.

Bus ids are 0-based contiguous integers in file order. Line orientation is
taken from the file's (from, to) order and gives the incidence matrix
C[i, e] = +1 where line e leaves bus i and -1 where it enters. Matrices are
dense; target systems are small (tens of buses).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np

from .costs import Box, PiecewiseCost
from .errors import ValidationError


class BusKind(str, Enum):
    GENERATOR = "generator"
    LOAD = "load"


@dataclass(frozen=True)
class Bus:
    """One bus: swing dynamics parameters plus controllable-load data."""

    id: int
    kind: BusKind
    damping: float
    inertia: float | None
    load_lower: float
    load_upper: float
    cost: PiecewiseCost

    def __post_init__(self) -> None:
        if self.damping <= 0:
            raise ValidationError(f"damping must be positive (bus {self.id})")
        if self.kind is BusKind.GENERATOR:
            if self.inertia is None or self.inertia <= 0:
                raise ValidationError(f"generator bus {self.id} needs inertia M > 0")
        elif self.inertia is not None:
            raise ValidationError(f"load bus {self.id} must not declare inertia")
        if self.load_lower > self.load_upper:
            raise ValidationError(f"bus {self.id} load bounds must satisfy lower <= upper")


@dataclass(frozen=True)
class Line:
    """Directed edge with susceptance and angle-difference limits."""

    index: int
    from_bus: int
    to_bus: int
    susceptance: float
    angle_lower: float
    angle_upper: float

    def __post_init__(self) -> None:
        if self.from_bus == self.to_bus:
            raise ValidationError(f"line {self.index} must join two distinct buses")
        if self.susceptance <= 0:
            raise ValidationError(f"line {self.index} susceptance must be positive")
        if self.angle_lower > self.angle_upper:
            raise ValidationError(f"line {self.index} angle bounds must satisfy lower <= upper")


class NetworkModel:
    """Validated network: ordered buses and lines plus cached matrix views."""

    def __init__(self, buses: list[Bus], lines: list[Line]):
        self.buses = list(buses)
        self.lines = list(lines)
        self._validate()

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def m(self) -> int:
        return len(self.lines)

    @property
    def n_g(self) -> int:
        return int(self.generator_index.size)

    def _validate(self) -> None:
        if not self.buses:
            raise ValidationError("network needs at least one bus")
        for pos, bus in enumerate(self.buses):
            if bus.id != pos:
                raise ValidationError(f"bus ids must be 0-based and contiguous in file order (position {pos} has id {bus.id})")
        seen: set[tuple[int, int]] = set()
        for line in self.lines:
            for end in (line.from_bus, line.to_bus):
                if not 0 <= end < self.n:
                    raise ValidationError(f"line {line.index} references unknown bus {end}")
            key = (min(line.from_bus, line.to_bus), max(line.from_bus, line.to_bus))
            if key in seen:
                raise ValidationError(f"duplicate line between buses {key[0]} and {key[1]}")
            seen.add(key)
        if not self._connected():
            raise ValidationError("graph not connected")

    def _connected(self) -> bool:
        # Union-find over the undirected edge set.
        parent = list(range(self.n))

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for line in self.lines:
            ra, rb = find(line.from_bus), find(line.to_bus)
            if ra != rb:
                parent[ra] = rb
        root = find(0)
        return all(find(i) == root for i in range(self.n))

    # -- matrix views -------------------------------------------------------

    @cached_property
    def incidence(self) -> np.ndarray:
        C = np.zeros((self.n, self.m))
        for e, line in enumerate(self.lines):
            C[line.from_bus, e] = 1.0
            C[line.to_bus, e] = -1.0
        C.setflags(write=False)
        return C

    @cached_property
    def susceptances(self) -> np.ndarray:
        B = np.array([line.susceptance for line in self.lines], dtype=float)
        B.setflags(write=False)
        return B

    @cached_property
    def laplacian(self) -> np.ndarray:
        C = self.incidence
        L = (C * self.susceptances) @ C.T
        L.setflags(write=False)
        return L

    @cached_property
    def generator_index(self) -> np.ndarray:
        idx = np.array([b.id for b in self.buses if b.kind is BusKind.GENERATOR], dtype=int)
        idx.setflags(write=False)
        return idx

    @cached_property
    def load_index(self) -> np.ndarray:
        idx = np.array([b.id for b in self.buses if b.kind is BusKind.LOAD], dtype=int)
        idx.setflags(write=False)
        return idx

    @cached_property
    def damping(self) -> np.ndarray:
        D = np.array([b.damping for b in self.buses], dtype=float)
        D.setflags(write=False)
        return D

    @cached_property
    def inertia_generators(self) -> np.ndarray:
        M = np.array([b.inertia for b in self.buses if b.kind is BusKind.GENERATOR], dtype=float)
        M.setflags(write=False)
        return M

    @cached_property
    def load_box(self) -> Box:
        return Box(
            lower=np.array([b.load_lower for b in self.buses]),
            upper=np.array([b.load_upper for b in self.buses]),
        )

    @cached_property
    def angle_lower(self) -> np.ndarray:
        v = np.array([ln.angle_lower for ln in self.lines], dtype=float)
        v.setflags(write=False)
        return v

    @cached_property
    def angle_upper(self) -> np.ndarray:
        v = np.array([ln.angle_upper for ln in self.lines], dtype=float)
        v.setflags(write=False)
        return v

    @property
    def costs(self) -> list[PiecewiseCost]:
        return [b.cost for b in self.buses]

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "buses": [
                {
                    "id": b.id,
                    "kind": b.kind.value,
                    **({"M": b.inertia} if b.kind is BusKind.GENERATOR else {}),
                    "D": b.damping,
                    "p_l_min": b.load_lower,
                    "p_l_max": b.load_upper,
                    "cost": b.cost.to_pieces(),
                }
                for b in self.buses
            ],
            "lines": [
                {
                    "from": ln.from_bus,
                    "to": ln.to_bus,
                    "B": ln.susceptance,
                    "theta_min": ln.angle_lower,
                    "theta_max": ln.angle_upper,
                }
                for ln in self.lines
            ],
        }


def incidence(model: NetworkModel) -> np.ndarray:
    """Oriented incidence matrix C (n x m), +1 at the from-bus of each line."""
    return model.incidence


def laplacian_weighted(model: NetworkModel) -> np.ndarray:
    """Susceptance-weighted Laplacian C diag(B) C^T."""
    return model.laplacian


def _require_fields(obj: dict, required: dict[str, type | tuple], optional: dict[str, type | tuple], where: str) -> None:
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise ValidationError(f"unknown fields {sorted(unknown)} in {where}")
    missing = set(required) - set(obj)
    if missing:
        raise ValidationError(f"missing fields {sorted(missing)} in {where}")


def _parse_bus(raw: dict, pos: int) -> Bus:
    where = f"buses[{pos}]"
    if not isinstance(raw, dict):
        raise ValidationError(f"{where} must be an object")
    _require_fields(
        raw,
        required={"id": int, "kind": str, "D": (int, float), "p_l_min": (int, float), "p_l_max": (int, float), "cost": list},
        optional={"M": (int, float)},
        where=where,
    )
    kind_raw = raw["kind"]
    try:
        kind = BusKind(kind_raw)
    except ValueError:
        raise ValidationError(f"{where}: kind must be 'generator' or 'load', got {kind_raw!r}") from None
    if not isinstance(raw["cost"], list):
        raise ValidationError(f"{where}: cost must be a list of pieces")
    return Bus(
        id=int(raw["id"]),
        kind=kind,
        damping=float(raw["D"]),
        inertia=float(raw["M"]) if "M" in raw else None,
        load_lower=float(raw["p_l_min"]),
        load_upper=float(raw["p_l_max"]),
        cost=PiecewiseCost.from_pieces(raw["cost"]),
    )


def _parse_line(raw: dict, pos: int) -> Line:
    where = f"lines[{pos}]"
    if not isinstance(raw, dict):
        raise ValidationError(f"{where} must be an object")
    _require_fields(
        raw,
        required={"from": int, "to": int, "B": (int, float), "theta_min": (int, float), "theta_max": (int, float)},
        optional={},
        where=where,
    )
    return Line(
        index=pos,
        from_bus=int(raw["from"]),
        to_bus=int(raw["to"]),
        susceptance=float(raw["B"]),
        angle_lower=float(raw["theta_min"]),
        angle_upper=float(raw["theta_max"]),
    )


def parse_network(data: dict, source: str = "<data>") -> NetworkModel:
    """Validate an already-decoded network document."""
    if not isinstance(data, dict):
        raise ValidationError(f"{source}: network document must be an object")
    unknown = set(data) - {"buses", "lines"}
    if unknown:
        raise ValidationError(f"{source}: unknown top-level fields {sorted(unknown)}")
    if "buses" not in data or "lines" not in data:
        raise ValidationError(f"{source}: network document needs 'buses' and 'lines' arrays")
    buses = [_parse_bus(b, i) for i, b in enumerate(data["buses"])]
    lines = [_parse_line(ln, i) for i, ln in enumerate(data["lines"])]
    return NetworkModel(buses, lines)


def load_network(path: str | Path) -> NetworkModel:
    """Load and validate a network description file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read network file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return parse_network(data, source=str(path))


def serialize_network(model: NetworkModel) -> str:
    """JSON text that load_network parses back to an identical model."""
    return json.dumps(model.to_dict(), indent=2)
