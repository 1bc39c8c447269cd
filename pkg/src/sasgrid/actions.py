"""The discrete action catalogue scored by the policy.

Index 0 is do-nothing, followed by single-substation bus configurations
(ordered by substation then bitmask), line disconnect/reconnect pairs
(ordered by line) and, optionally, redispatch steps (ordered by generator
then delta).  Bus configurations are stored in canonical form: the first
slot of the substation sits on bus 1, which removes the bus 1 <-> 2
relabeling symmetry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import NotInCatalogue, OutOfRange
from .grid import DO_NOTHING, Action, GridSpec

DEFAULT_REDISPATCH_FRACTIONS = (-0.4, -0.2, 0.2, 0.4)


def canonical_buses(buses) -> tuple[int, ...]:
    buses = tuple(int(b) for b in buses)
    if buses and buses[0] == 2:
        return tuple(3 - b for b in buses)
    return buses


def mask_to_buses(mask: int, n: int) -> tuple[int, ...]:
    return tuple(2 if mask >> j & 1 else 1 for j in range(n))


def substation_configurations(n_slots: int, keep_reference: bool = False) -> list[int]:
    """Canonical bitmasks for a substation with ``n_slots`` slots.

    Bit ``j`` set means slot ``j`` on bus 2.  Bit 0 is pinned to 0; the
    all-bus-1 mask 0 is dropped unless ``keep_reference``.
    """
    if n_slots == 0:
        return []
    masks = [m for m in range(0, 1 << n_slots, 2)]
    return masks if keep_reference else masks[1:]


def canonical(action: Action) -> Action:
    if action.kind == "set_bus":
        return Action.set_bus(action.substation, canonical_buses(action.buses))
    if action.kind == "set_line":
        return Action.set_line(action.line, action.connect)
    if action.kind == "redispatch":
        return Action.redispatch(action.generator, action.delta_mw)
    return DO_NOTHING


@dataclass(frozen=True, eq=False)
class ActionCatalogue:
    spec: GridSpec
    actions: tuple[Action, ...]
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        index = {}
        for i, a in enumerate(self.actions):
            if a in index:
                raise ValueError(f"duplicate action {a.describe()}")
            index[a] = i
        object.__setattr__(self, "_index", index)

    def __len__(self):
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def __eq__(self, other):
        return isinstance(other, ActionCatalogue) and self.actions == other.actions

    def action_at(self, index: int) -> Action:
        if not 0 <= index < len(self.actions):
            raise OutOfRange(f"action index {index} outside [0, {len(self.actions)})")
        return self.actions[index]

    def index_of(self, action: Action) -> int:
        try:
            return self._index[canonical(action)]
        except KeyError:
            raise NotInCatalogue(f"action not in catalogue: {action.describe()}") from None

    def kinds(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for a in self.actions:
            out[a.kind] = out.get(a.kind, 0) + 1
        return out

    def table(self) -> str:
        """Human-readable dump: index, kind, target, description."""
        rows = [f"{'index':>6}  {'kind':<10}  {'target':<8}  description"]
        for i, a in enumerate(self.actions):
            target = {"set_bus": f"sub{a.substation}", "set_line": f"line{a.line}",
                      "redispatch": f"gen{a.generator}"}.get(a.kind, "-")
            rows.append(f"{i:>6}  {a.kind:<10}  {target:<8}  {a.describe()}")
        return "\n".join(rows)


def build_catalogue(
    spec: GridSpec,
    include_redispatch: bool = False,
    redispatch_levels=None,
    include_lines: bool = True,
    keep_reference: bool = False,
) -> ActionCatalogue:
    """Enumerate every single-substation action of ``spec`` in a fixed order.

    ``redispatch_levels`` is a list of MW deltas applied to every dispatchable
    generator; by default each generator gets +-20 % and +-40 % of its ramp
    limit.
    """
    actions = [DO_NOTHING]
    for sub, slots in enumerate(spec.sub_slots):
        for mask in substation_configurations(len(slots), keep_reference):
            actions.append(Action.set_bus(sub, mask_to_buses(mask, len(slots))))
    if include_lines:
        for ln in range(spec.n_line):
            actions.append(Action.set_line(ln, False))
            actions.append(Action.set_line(ln, True))
    if include_redispatch:
        for g in spec.generators:
            if g.renewable:
                continue
            levels = (redispatch_levels if redispatch_levels is not None
                      else [f * g.ramp for f in DEFAULT_REDISPATCH_FRACTIONS])
            for d in sorted(set(float(x) for x in levels)):
                if d != 0.0:
                    actions.append(Action.redispatch(g.id, d))
    return ActionCatalogue(spec, tuple(actions))
