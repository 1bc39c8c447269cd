"""Static grid description, topology state and bus-switching mechanics.

Every connectable thing in the grid owns one *slot* in a flat assignment
array: each line has two endpoint slots (origin, extremity), each generator
and each load one slot.  Slot order is fixed:

    [line0.or, line0.ex, line1.or, ..., gen0, gen1, ..., load0, load1, ...]

A slot holds the bus it is wired to: 1 or 2, or 0 for the endpoints of a
disconnected line.  Each substation has two bus bars, so the electrical
nodes of the grid are the ``(substation, bus)`` pairs, numbered
``node = 2 * substation + (bus - 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import CooldownViolation, GridSpecError, UnknownElement

__all__ = [
    "Action",
    "DO_NOTHING",
    "GenSpec",
    "GridSpec",
    "Islands",
    "LineSpec",
    "LoadSpec",
    "Substation",
    "TopologyState",
    "apply_topology_action",
    "electrical_islands",
    "initial_topology",
    "isolated_slots",
    "load_grid",
    "load_preset",
    "parse_grid",
    "PRESETS",
]

PRESETS = ("case5", "case14")


@dataclass(frozen=True)
class Substation:
    id: int
    name: str = ""


@dataclass(frozen=True)
class LineSpec:
    id: int
    origin: int
    extremity: int
    reactance: float  # per-unit
    limit: float  # thermal limit, per-unit flow
    attackable: bool = True


@dataclass(frozen=True)
class GenSpec:
    id: int
    substation: int
    p_min: float  # MW
    p_max: float  # MW
    ramp: float  # MW per step
    renewable: bool = False


@dataclass(frozen=True)
class LoadSpec:
    id: int
    substation: int
    nominal_mw: float = 0.0


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Immutable grid graph: substations, lines, generators and loads.

    Derived index arrays (slot -> substation, slot kind, per-substation slot
    lists) are computed once at construction and shared by every state.
    """

    substations: tuple[Substation, ...]
    lines: tuple[LineSpec, ...]
    generators: tuple[GenSpec, ...]
    loads: tuple[LoadSpec, ...]
    name: str = "grid"
    base_mva: float = 100.0

    slot_substation: np.ndarray = field(init=False, repr=False)
    sub_slots: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "substations", tuple(self.substations))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "loads", tuple(self.loads))
        self._validate()

        n_sub = len(self.substations)
        slot_sub = []
        for ln in self.lines:
            slot_sub += [ln.origin, ln.extremity]
        slot_sub += [g.substation for g in self.generators]
        slot_sub += [ld.substation for ld in self.loads]
        slot_sub = np.asarray(slot_sub, dtype=np.int64)
        slot_sub.setflags(write=False)
        object.__setattr__(self, "slot_substation", slot_sub)
        per_sub = [[] for _ in range(n_sub)]
        for slot, sub in enumerate(slot_sub):
            per_sub[sub].append(slot)
        object.__setattr__(self, "sub_slots", tuple(tuple(s) for s in per_sub))

        x = np.array([ln.reactance for ln in self.lines], dtype=np.float64)
        lim = np.array([ln.limit for ln in self.lines], dtype=np.float64)
        for arr in (x, lim):
            arr.setflags(write=False)
        object.__setattr__(self, "reactance", x)
        object.__setattr__(self, "limit", lim)
        gen_sub = np.array([g.substation for g in self.generators], dtype=np.int64)
        load_sub = np.array([ld.substation for ld in self.loads], dtype=np.int64)
        gen_sub.setflags(write=False)
        load_sub.setflags(write=False)
        object.__setattr__(self, "gen_substation", gen_sub)
        object.__setattr__(self, "load_substation", load_sub)

    def _validate(self):
        n_sub = len(self.substations)
        if n_sub == 0:
            raise GridSpecError("grid has no substations")
        for kind, items in (("substation", self.substations), ("line", self.lines),
                            ("generator", self.generators), ("load", self.loads)):
            ids = [it.id for it in items]
            if ids != list(range(len(items))):
                raise GridSpecError(f"{kind} ids must be 0..{len(items) - 1} in order, got {ids}")
        for ln in self.lines:
            for end in (ln.origin, ln.extremity):
                if not 0 <= end < n_sub:
                    raise GridSpecError(f"line {ln.id} references unknown substation {end}")
            if ln.origin == ln.extremity:
                raise GridSpecError(f"line {ln.id} has identical endpoints")
            if not ln.reactance > 0 or not ln.limit > 0:
                raise GridSpecError(f"line {ln.id} needs positive reactance and thermal limit")
        for g in self.generators:
            if not 0 <= g.substation < n_sub:
                raise GridSpecError(f"generator {g.id} references unknown substation {g.substation}")
            if g.p_min > g.p_max:
                raise GridSpecError(f"generator {g.id} has p_min > p_max")
            if g.ramp < 0:
                raise GridSpecError(f"generator {g.id} has negative ramp")
        for ld in self.loads:
            if not 0 <= ld.substation < n_sub:
                raise GridSpecError(f"load {ld.id} references unknown substation {ld.substation}")
        # the reference topology (everything on bus 1) must be one component
        parent = list(range(n_sub))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for ln in self.lines:
            parent[find(ln.origin)] = find(ln.extremity)
        if len({find(s) for s in range(n_sub)}) != 1:
            raise GridSpecError("reference topology is not a single connected component")

    # -- sizes and slot helpers -------------------------------------------------

    @property
    def n_sub(self) -> int:
        return len(self.substations)

    @property
    def n_line(self) -> int:
        return len(self.lines)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def n_load(self) -> int:
        return len(self.loads)

    @property
    def n_slots(self) -> int:
        return 2 * self.n_line + self.n_gen + self.n_load

    @property
    def n_nodes(self) -> int:
        return 2 * self.n_sub

    def line_slots(self, line: int) -> tuple[int, int]:
        return 2 * line, 2 * line + 1

    def gen_slot(self, gen: int) -> int:
        return 2 * self.n_line + gen

    def load_slot(self, load: int) -> int:
        return 2 * self.n_line + self.n_gen + load

    def describe_slot(self, slot: int) -> str:
        if slot < 2 * self.n_line:
            return f"line{slot // 2}.{'or' if slot % 2 == 0 else 'ex'}"
        slot -= 2 * self.n_line
        if slot < self.n_gen:
            return f"gen{slot}"
        return f"load{slot - self.n_gen}"

    @property
    def dispatchable(self) -> np.ndarray:
        return np.array([not g.renewable for g in self.generators], dtype=bool)


# --------------------------------------------------------------------------
# actions


@dataclass(frozen=True)
class Action:
    """One grid operation.

    ``kind`` is one of ``do_nothing``, ``set_bus`` (``substation`` + one bus
    per substation slot in slot order), ``set_line`` (``line`` + ``connect``;
    reconnection wires both ends to ``buses``, bus 1 by default) or
    ``redispatch`` (``generator`` + ``delta_mw``).
    """

    kind: str = "do_nothing"
    substation: int = -1
    buses: tuple[int, ...] = ()
    line: int = -1
    connect: bool = False
    generator: int = -1
    delta_mw: float = 0.0

    @classmethod
    def set_bus(cls, substation: int, buses) -> Action:
        return cls("set_bus", substation=int(substation), buses=tuple(int(b) for b in buses))

    @classmethod
    def set_line(cls, line: int, connect: bool, buses=(1, 1)) -> Action:
        return cls("set_line", line=int(line), connect=bool(connect),
                   buses=tuple(int(b) for b in buses) if connect else ())

    @classmethod
    def redispatch(cls, generator: int, delta_mw: float) -> Action:
        return cls("redispatch", generator=int(generator), delta_mw=float(delta_mw))

    @property
    def is_topological(self) -> bool:
        return self.kind in ("set_bus", "set_line")

    def describe(self) -> str:
        if self.kind == "do_nothing":
            return "do nothing"
        if self.kind == "set_bus":
            return f"substation {self.substation} buses {''.join(map(str, self.buses))}"
        if self.kind == "set_line":
            return f"{'reconnect' if self.connect else 'disconnect'} line {self.line}"
        return f"redispatch generator {self.generator} by {self.delta_mw:+g} MW"


DO_NOTHING = Action()


# --------------------------------------------------------------------------
# topology state


@dataclass(eq=False)
class TopologyState:
    """Bus assignment of every slot plus the per-line/per-substation counters.

    Treated as a value: operations return new states and never mutate their
    input.
    """

    bus_of: np.ndarray  # int8 per slot, in {0, 1, 2}
    line_connected: np.ndarray  # bool per line
    overload_counter: np.ndarray  # int per line
    line_cooldown: np.ndarray  # int per line
    substation_cooldown: np.ndarray  # int per substation

    def copy(self) -> TopologyState:
        return TopologyState(
            self.bus_of.copy(),
            self.line_connected.copy(),
            self.overload_counter.copy(),
            self.line_cooldown.copy(),
            self.substation_cooldown.copy(),
        )

    def __eq__(self, other):
        if not isinstance(other, TopologyState):
            return NotImplemented
        return all(
            np.array_equal(a, b)
            for a, b in zip(self._arrays(), other._arrays())
        )

    def _arrays(self):
        return (self.bus_of, self.line_connected, self.overload_counter,
                self.line_cooldown, self.substation_cooldown)

    def key(self) -> bytes:
        """Hashable electrical configuration (bus assignment only)."""
        return self.bus_of.tobytes()

    def check(self, spec: GridSpec) -> None:
        """Raise ``ValueError`` if the state breaks a topology invariant."""
        if self.bus_of.shape != (spec.n_slots,):
            raise ValueError("bus_of has the wrong length")
        if np.any((self.bus_of < 0) | (self.bus_of > 2)):
            raise ValueError("bus values must be in {0, 1, 2}")
        ends = self.bus_of[: 2 * spec.n_line].reshape(-1, 2)
        if not np.array_equal((ends == 0).any(axis=1), ~self.line_connected):
            raise ValueError("line endpoint on bus 0 iff the line is disconnected")
        if np.any((ends == 0).any(axis=1) != (ends == 0).all(axis=1)):
            raise ValueError("a disconnected line must have both endpoints on bus 0")
        if np.any(self.bus_of[2 * spec.n_line:] == 0):
            raise ValueError("generators and loads must sit on bus 1 or 2")
        for arr in (self.overload_counter, self.line_cooldown, self.substation_cooldown):
            if np.any(arr < 0):
                raise ValueError("counters must be non-negative")


def initial_topology(spec: GridSpec) -> TopologyState:
    """Reference topology: every slot on bus 1, every line in service."""
    return TopologyState(
        bus_of=np.ones(spec.n_slots, dtype=np.int8),
        line_connected=np.ones(spec.n_line, dtype=bool),
        overload_counter=np.zeros(spec.n_line, dtype=np.int64),
        line_cooldown=np.zeros(spec.n_line, dtype=np.int64),
        substation_cooldown=np.zeros(spec.n_sub, dtype=np.int64),
    )


def apply_topology_action(
    spec: GridSpec,
    topo: TopologyState,
    action: Action,
    sub_cooldown: int = 3,
    line_cooldown: int = 3,
) -> TopologyState:
    """Return the topology after ``action``; ``topo`` is left untouched.

    Bus reconfiguration leaves the endpoints of disconnected lines on bus 0.
    Redispatch and do-nothing return an identical copy.
    """
    new = topo.copy()
    if action.kind == "set_bus":
        sub = action.substation
        if not 0 <= sub < spec.n_sub:
            raise UnknownElement(f"unknown substation {sub}")
        slots = spec.sub_slots[sub]
        if len(action.buses) != len(slots) or any(b not in (1, 2) for b in action.buses):
            raise UnknownElement(f"substation {sub} expects {len(slots)} buses in {{1, 2}}")
        if topo.substation_cooldown[sub] > 0:
            raise CooldownViolation(f"substation {sub} is cooling down "
                                    f"({topo.substation_cooldown[sub]} steps)")
        for slot, bus in zip(slots, action.buses):
            if slot < 2 * spec.n_line and not topo.line_connected[slot // 2]:
                continue
            new.bus_of[slot] = bus
        new.substation_cooldown[sub] = sub_cooldown
    elif action.kind == "set_line":
        ln = action.line
        if not 0 <= ln < spec.n_line:
            raise UnknownElement(f"unknown line {ln}")
        if topo.line_cooldown[ln] > 0:
            raise CooldownViolation(f"line {ln} is cooling down ({topo.line_cooldown[ln]} steps)")
        a, b = spec.line_slots(ln)
        if action.connect:
            buses = action.buses or (1, 1)
            new.bus_of[a], new.bus_of[b] = buses
            new.line_connected[ln] = True
        else:
            new.bus_of[a] = new.bus_of[b] = 0
            new.line_connected[ln] = False
        new.overload_counter[ln] = 0
        new.line_cooldown[ln] = line_cooldown
    elif action.kind == "redispatch":
        if not 0 <= action.generator < spec.n_gen:
            raise UnknownElement(f"unknown generator {action.generator}")
    elif action.kind != "do_nothing":
        raise UnknownElement(f"unknown action kind {action.kind!r}")
    return new


# --------------------------------------------------------------------------
# islands


@dataclass
class Islands:
    """Connected components of the (substation, bus) node graph.

    ``node_label`` is -1 for nodes that hold no connected slot.  ``slot_label``
    gives the component of every slot (-1 for disconnected line endpoints).
    """

    node_label: np.ndarray
    slot_label: np.ndarray
    count: int

    def components(self) -> list[list[int]]:
        out = [[] for _ in range(self.count)]
        for slot, lab in enumerate(self.slot_label):
            if lab >= 0:
                out[lab].append(slot)
        return out


def slot_nodes(spec: GridSpec, bus_of: np.ndarray) -> np.ndarray:
    """Node index of every slot (-1 for slots on bus 0)."""
    nodes = 2 * spec.slot_substation + (bus_of.astype(np.int64) - 1)
    nodes[bus_of == 0] = -1
    return nodes


def electrical_islands(spec: GridSpec, topo: TopologyState) -> Islands:
    from .kernels import label_nodes

    nodes = slot_nodes(spec, topo.bus_of)
    nl = spec.n_line
    frm = nodes[0: 2 * nl: 2].astype(np.int32)
    to = nodes[1: 2 * nl: 2].astype(np.int32)
    raw = np.asarray(label_nodes(spec.n_nodes, frm, to))
    active = np.zeros(spec.n_nodes, dtype=bool)
    active[nodes[nodes >= 0]] = True
    # relabel active components 0..k-1 in order of first node
    node_label = np.full(spec.n_nodes, -1, dtype=np.int64)
    mapping: dict[int, int] = {}
    for n in range(spec.n_nodes):
        if active[n]:
            node_label[n] = mapping.setdefault(int(raw[n]), len(mapping))
    slot_label = np.where(nodes >= 0, node_label[np.maximum(nodes, 0)], -1)
    return Islands(node_label, slot_label, len(mapping))


def isolated_slots(spec: GridSpec, bus_of: np.ndarray) -> list[int]:
    """Generator/load slots whose node has no connected line attached."""
    nodes = slot_nodes(spec, bus_of)
    has_line = np.zeros(spec.n_nodes, dtype=bool)
    ln = nodes[: 2 * spec.n_line]
    has_line[ln[ln >= 0]] = True
    first = 2 * spec.n_line
    return [first + i for i, n in enumerate(nodes[first:]) if not has_line[n]]


# --------------------------------------------------------------------------
# grid definition files


_SECTIONS = ("grid", "substations", "lines", "generators", "loads")


def _flag(tok: str) -> bool:
    if tok.lower() in ("1", "true", "yes", "y"):
        return True
    if tok.lower() in ("0", "false", "no", "n"):
        return False
    raise ValueError(f"not a boolean flag: {tok!r}")


def parse_grid(text: str) -> GridSpec:
    """Parse the sectioned grid text format (see ``docs/grid_format.md``)."""
    section = None
    meta: dict[str, str] = {}
    subs, lines, gens, loads = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise GridSpecError(f"line {lineno}: unknown section [{section}]")
            continue
        tok = line.split()
        try:
            if section == "grid":
                key, _, value = line.partition("=")
                meta[key.strip()] = value.strip()
            elif section == "substations":
                subs.append(Substation(int(tok[0]), tok[1] if len(tok) > 1 else f"S{tok[0]}"))
            elif section == "lines":
                lines.append(LineSpec(int(tok[0]), int(tok[1]), int(tok[2]), float(tok[3]),
                                      float(tok[4]), _flag(tok[5]) if len(tok) > 5 else True))
            elif section == "generators":
                gens.append(GenSpec(int(tok[0]), int(tok[1]), float(tok[2]), float(tok[3]),
                                    float(tok[4]), _flag(tok[5]) if len(tok) > 5 else False))
            elif section == "loads":
                loads.append(LoadSpec(int(tok[0]), int(tok[1]),
                                      float(tok[2]) if len(tok) > 2 else 0.0))
            else:
                raise GridSpecError(f"line {lineno}: record outside of a section")
        except (IndexError, ValueError) as exc:
            raise GridSpecError(f"line {lineno}: malformed record {raw.strip()!r} ({exc})") from exc
    return GridSpec(subs, lines, gens, loads, name=meta.get("name", "grid"),
                    base_mva=float(meta.get("base_mva", 100.0)))


def format_grid(spec: GridSpec) -> str:
    out = ["[grid]", f"name = {spec.name}", f"base_mva = {spec.base_mva:g}", "",
           "[substations]", "# id name"]
    out += [f"{s.id} {s.name}" for s in spec.substations]
    out += ["", "[lines]", "# id origin extremity reactance_pu limit_pu attackable"]
    out += [f"{ln.id} {ln.origin} {ln.extremity} {ln.reactance!r} {ln.limit!r} {int(ln.attackable)}"
            for ln in spec.lines]
    out += ["", "[generators]", "# id substation p_min p_max ramp renewable"]
    out += [f"{g.id} {g.substation} {g.p_min!r} {g.p_max!r} {g.ramp!r} {int(g.renewable)}"
            for g in spec.generators]
    out += ["", "[loads]", "# id substation nominal_mw"]
    out += [f"{ld.id} {ld.substation} {ld.nominal_mw!r}" for ld in spec.loads]
    return "\n".join(out) + "\n"


def load_grid(path) -> GridSpec:
    return parse_grid(Path(path).read_text(encoding="utf-8"))


def load_preset(name: str) -> GridSpec:
    if name not in PRESETS:
        raise GridSpecError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("sasgrid.presets").joinpath(f"{name}.grid").read_text(encoding="utf-8")
    return parse_grid(text)


def resolve_grid(ref: str) -> GridSpec:
    """Preset name or path to a grid file."""
    if ref in PRESETS:
        return load_preset(ref)
    return load_grid(ref)
