"""Static power-system description and the bundled 6-bus case."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

__all__ = [
    "CaseError",
    "Bus",
    "Line",
    "Generator",
    "RenewableSite",
    "GridCase",
    "SystemInstant",
    "load_case",
    "save_case",
    "builtin_ieee6",
    "BUILTIN_CASE",
]

BUILTIN_CASE = "ieee6.case"


class CaseError(ValueError):
    """Malformed case file or violated case invariant."""


@dataclass(frozen=True)
class Bus:
    id: int
    load_share: float = 0.0
    imbalance_penalty: float = 100.0  # EUR/MW


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    reactance: float  # p.u.
    limit: float  # MW


@dataclass(frozen=True)
class Generator:
    bus: int
    pmin: float
    pmax: float
    cost: float  # EUR/MW
    cost_up: float
    cost_down: float
    ramp_up: float  # MW
    ramp_down: float


@dataclass(frozen=True)
class RenewableSite:
    bus: int
    kind: str  # PV | Wind
    curtail_penalty: float = 0.1  # EUR/MW


@dataclass(frozen=True)
class GridCase:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    renewables: tuple[RenewableSite, ...]
    slack_bus: int
    base_mva: float = 100.0
    name: str = "case"

    def __post_init__(self):
        self.validate()

    # ---------------------------------------------------------------- checks
    def validate(self) -> None:
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseError("duplicate bus ids")
        idset = set(ids)
        if self.slack_bus not in idset:
            raise CaseError(f"slack bus {self.slack_bus} is not a bus")
        if self.base_mva <= 0:
            raise CaseError("base_mva must be positive")
        for i, b in enumerate(self.buses):
            if b.load_share < 0 or b.imbalance_penalty < 0:
                raise CaseError(f"bus[{i}] (id {b.id}): load_share and imbalance penalty must be >= 0")
        for i, ln in enumerate(self.lines):
            if ln.from_bus not in idset or ln.to_bus not in idset:
                raise CaseError(f"line[{i}]: endpoint not a bus ({ln.from_bus}-{ln.to_bus})")
            if ln.from_bus == ln.to_bus:
                raise CaseError(f"line[{i}]: self loop at bus {ln.from_bus}")
            if ln.reactance <= 0:
                raise CaseError(f"line[{i}]: reactance must be positive")
            if ln.limit < 0:
                raise CaseError(f"line[{i}]: limit must be >= 0")
        for i, g in enumerate(self.generators):
            if g.bus not in idset:
                raise CaseError(f"generator[{i}]: bus {g.bus} does not exist")
            if g.pmin > g.pmax:
                raise CaseError(f"generator[{i}]: pmin {g.pmin} > pmax {g.pmax}")
            for fname in ("pmin", "cost", "cost_up", "cost_down", "ramp_up", "ramp_down"):
                if getattr(g, fname) < 0:
                    raise CaseError(f"generator[{i}]: {fname} must be >= 0")
        for i, r in enumerate(self.renewables):
            if r.bus not in idset:
                raise CaseError(f"renewable[{i}]: bus {r.bus} does not exist")
            if r.kind not in ("PV", "Wind"):
                raise CaseError(f"renewable[{i}]: kind must be PV or Wind, got {r.kind!r}")
            if r.curtail_penalty < 0:
                raise CaseError(f"renewable[{i}]: curtail penalty must be >= 0")
        if not self._connected():
            raise CaseError("line graph is not connected")

    def _connected(self) -> bool:
        adj = {b.id: set() for b in self.buses}
        for ln in self.lines:
            adj[ln.from_bus].add(ln.to_bus)
            adj[ln.to_bus].add(ln.from_bus)
        seen, stack = {self.slack_bus}, [self.slack_bus]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == len(self.buses)

    # ----------------------------------------------------------- structure
    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_line(self) -> int:
        return len(self.lines)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def n_site(self) -> int:
        return len(self.renewables)

    def bus_index(self, bus_id: int) -> int:
        for i, b in enumerate(self.buses):
            if b.id == bus_id:
                return i
        raise KeyError(bus_id)

    def incidence(self) -> np.ndarray:
        """Bus x line matrix, +1 at the sending bus and -1 at the receiving bus."""
        M = np.zeros((self.n_bus, self.n_line))
        for l, ln in enumerate(self.lines):
            M[self.bus_index(ln.from_bus), l] = 1.0
            M[self.bus_index(ln.to_bus), l] = -1.0
        return M

    def gen_map(self) -> np.ndarray:
        M = np.zeros((self.n_bus, self.n_gen))
        for g, gen in enumerate(self.generators):
            M[self.bus_index(gen.bus), g] = 1.0
        return M

    def site_map(self) -> np.ndarray:
        M = np.zeros((self.n_bus, self.n_site))
        for s, site in enumerate(self.renewables):
            M[self.bus_index(site.bus), s] = 1.0
        return M

    def load_shares(self) -> np.ndarray:
        return np.array([b.load_share for b in self.buses])

    def site_kinds(self) -> tuple[str, ...]:
        return tuple(r.kind for r in self.renewables)

    # ------------------------------------------------------------ variants
    def with_line_scale(self, factor: float) -> "GridCase":
        lines = tuple(dataclasses.replace(ln, limit=ln.limit * factor) for ln in self.lines)
        return dataclasses.replace(self, lines=lines)

    def with_sites(self, kinds: tuple[str, ...]) -> "GridCase":
        """Keep only renewable sites of the given kinds (e.g. ``("PV",)``)."""
        return dataclasses.replace(self, renewables=tuple(r for r in self.renewables if r.kind in kinds))


@dataclass(frozen=True, eq=False)
class SystemInstant:
    """Per-bus load and per-site true / predicted renewable output, in MW."""

    load: np.ndarray
    renewable: np.ndarray
    predicted: np.ndarray = field(default=None)

    def __post_init__(self):
        load = np.asarray(self.load, dtype=float)
        ren = np.atleast_1d(np.asarray(self.renewable, dtype=float))
        pred = ren.copy() if self.predicted is None else np.atleast_1d(np.asarray(self.predicted, dtype=float))
        object.__setattr__(self, "load", load)
        object.__setattr__(self, "renewable", ren)
        object.__setattr__(self, "predicted", pred)
        if np.any(load < 0):
            raise ValueError("loads must be non-negative")
        if np.any(ren < 0):
            raise ValueError("renewable output must be non-negative")
        if pred.shape != ren.shape:
            raise ValueError("predicted and true renewables differ in shape")

    def with_prediction(self, predicted) -> "SystemInstant":
        return SystemInstant(self.load, self.renewable, np.atleast_1d(np.asarray(predicted, dtype=float)))

    def perfect(self) -> "SystemInstant":
        return SystemInstant(self.load, self.renewable, self.renewable.copy())


# ------------------------------------------------------------------ file i/o

_GEN_FIELDS = {
    "bus": "bus", "pmin_mw": "pmin", "pmax_mw": "pmax", "cost_eur_per_mw": "cost",
    "cost_up_eur_per_mw": "cost_up", "cost_down_eur_per_mw": "cost_down",
    "ramp_up_mw": "ramp_up", "ramp_down_mw": "ramp_down",
}
_LINE_FIELDS = {"from": "from_bus", "to": "to_bus", "reactance_pu": "reactance", "limit_mw": "limit"}
_BUS_FIELDS = {"id": "id", "load_share": "load_share", "imbalance_penalty_eur_per_mw": "imbalance_penalty"}
_SITE_FIELDS = {"bus": "bus", "kind": "kind", "curtail_penalty_eur_per_mw": "curtail_penalty"}


def _records(doc: dict, table: str, fields: dict, cls, optional=()):
    rows = doc.get(table, [])
    if not isinstance(rows, list):
        raise CaseError(f"[[{table}]] must be an array of tables")
    out = []
    for i, row in enumerate(rows):
        unknown = set(row) - set(fields)
        if unknown:
            raise CaseError(f"{table}[{i}]: unknown field(s) {sorted(unknown)}")
        kwargs = {}
        for key, attr in fields.items():
            if key not in row:
                if key in optional:
                    continue
                raise CaseError(f"{table}[{i}]: missing field '{key}'")
            val = row[key]
            if attr in ("id", "bus", "from_bus", "to_bus"):
                if not isinstance(val, int):
                    raise CaseError(f"{table}[{i}].{key}: expected an integer, got {val!r}")
            elif attr != "kind":
                if not isinstance(val, (int, float)) or isinstance(val, bool):
                    raise CaseError(f"{table}[{i}].{key}: expected a number, got {val!r}")
                val = float(val)
            kwargs[attr] = val
        out.append(cls(**kwargs))
    return tuple(out)


def load_case(path) -> GridCase:
    """Parse and validate a case file (TOML with unit-suffixed keys)."""
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise CaseError(f"{path}: {exc}") from exc
    for key in ("slack_bus",):
        if key not in doc:
            raise CaseError(f"{path}: missing top-level field '{key}'")
    try:
        return GridCase(
            buses=_records(doc, "bus", _BUS_FIELDS, Bus, optional=("load_share", "imbalance_penalty_eur_per_mw")),
            lines=_records(doc, "line", _LINE_FIELDS, Line),
            generators=_records(doc, "generator", _GEN_FIELDS, Generator),
            renewables=_records(doc, "renewable", _SITE_FIELDS, RenewableSite, optional=("curtail_penalty_eur_per_mw",)),
            slack_bus=int(doc["slack_bus"]),
            base_mva=float(doc.get("base_mva", 100.0)),
            name=str(doc.get("name", path.stem)),
        )
    except CaseError as exc:
        raise CaseError(f"{path}: {exc}") from None


def _fmt(v) -> str:
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def save_case(case: GridCase, path) -> None:
    lines = [f"name = {_fmt(case.name)}", f"base_mva = {_fmt(case.base_mva)}", f"slack_bus = {case.slack_bus}", ""]

    def block(table, items, fields):
        for it in items:
            lines.append(f"[[{table}]]")
            for key, attr in fields.items():
                lines.append(f"{key} = {_fmt(getattr(it, attr))}")
            lines.append("")

    block("bus", case.buses, _BUS_FIELDS)
    block("line", case.lines, _LINE_FIELDS)
    block("generator", case.generators, _GEN_FIELDS)
    block("renewable", case.renewables, _SITE_FIELDS)
    Path(path).write_text("\n".join(lines))


def builtin_ieee6() -> GridCase:
    text = resources.files("mmnowcast").joinpath("data").joinpath(BUILTIN_CASE)
    with resources.as_file(text) as p:
        return load_case(p)
