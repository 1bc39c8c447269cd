from __future__ import annotations

import itertools

import pytest

from sasgrid.actions import build_catalogue, canonical_buses, substation_configurations
from sasgrid.environment import GridEnv, flat_scenario
from sasgrid.errors import NotInCatalogue, OutOfRange
from sasgrid.grid import DO_NOTHING, PRESETS, Action, load_preset

# frozen from the brute-force enumeration below
CASE5_SIZE = 62
CASE14_SIZE = 197


def brute_force_configs(n: int) -> set[tuple[int, ...]]:
    """All bus vectors over n slots, complements merged, all-bus-1 dropped."""
    out = set()
    for raw in itertools.product((1, 2), repeat=n):
        flipped = tuple(3 - b for b in raw)
        rep = min(raw, flipped)
        if len(set(rep)) > 1:
            out.add(rep)
    return out


@pytest.mark.parametrize("n", range(1, 9))
def test_configuration_count_matches_brute_force(n):
    got = {tuple(2 if m >> j & 1 else 1 for j in range(n)) for m in substation_configurations(n)}
    assert got == brute_force_configs(n)
    assert len(got) == 2 ** (n - 1) - 1


def test_three_slot_substation_has_three_splits():
    assert len(substation_configurations(3)) == 3
    assert len(substation_configurations(3, keep_reference=True)) == 4


@pytest.mark.parametrize("name,size", [("case5", CASE5_SIZE), ("case14", CASE14_SIZE)])
def test_catalogue_size_is_frozen(name, size):
    spec = load_preset(name)
    n_bus = sum(len(brute_force_configs(len(s))) for s in spec.sub_slots)
    assert 1 + n_bus + 2 * spec.n_line == size
    assert len(build_catalogue(spec)) == size


def test_catalogue_layout(cat5, case5):
    assert cat5.action_at(0) == DO_NOTHING
    kinds = [a.kind for a in cat5]
    assert kinds == sorted(kinds, key=["do_nothing", "set_bus", "set_line"].index)
    subs = [a.substation for a in cat5 if a.kind == "set_bus"]
    assert subs == sorted(subs)
    assert all(a.buses[0] == 1 for a in cat5 if a.kind == "set_bus")
    assert "redispatch" not in cat5.kinds()


def test_redispatch_levels(case5):
    cat = build_catalogue(case5, include_redispatch=True)
    red = [a for a in cat if a.kind == "redispatch"]
    assert [a.delta_mw for a in red] == [-16.0, -8.0, 8.0, 16.0]  # 40 MW ramp, generator 0 only
    cat = build_catalogue(case5, include_redispatch=True, redispatch_levels=[-5, 0, 5])
    assert [a.delta_mw for a in cat if a.kind == "redispatch"] == [-5.0, 5.0]


@pytest.mark.parametrize("name", PRESETS)
def test_index_round_trip(name):
    cat = build_catalogue(load_preset(name))
    assert all(cat.index_of(cat.action_at(i)) == i for i in range(len(cat)))
    assert build_catalogue(load_preset(name)) == cat


def test_swapped_buses_map_to_canonical(case14):
    cat = build_catalogue(case14)
    for sub, slots in enumerate(case14.sub_slots):
        if len(slots) > 4:
            continue
        for raw in itertools.product((1, 2), repeat=len(slots)):
            if len(set(raw)) == 1:
                continue
            flipped = tuple(3 - b for b in raw)
            i = cat.index_of(Action.set_bus(sub, raw))
            assert i == cat.index_of(Action.set_bus(sub, flipped))
            assert cat.action_at(i).buses == canonical_buses(raw)


def test_lookup_errors(cat5):
    with pytest.raises(OutOfRange):
        cat5.action_at(len(cat5))
    with pytest.raises(OutOfRange):
        cat5.action_at(-1)
    with pytest.raises(NotInCatalogue):
        cat5.index_of(Action.set_bus(0, (1, 1, 1, 1, 1)))
    with pytest.raises(NotInCatalogue):
        cat5.index_of(Action.redispatch(0, 3.0))


@pytest.mark.parametrize("name", PRESETS)
def test_every_action_is_legal_at_reset(name):
    spec = load_preset(name)
    env = GridEnv(spec, flat_scenario(spec, 5))
    env.reset()
    for a in build_catalogue(spec, include_redispatch=True):
        ok, v = env.is_legal(a)
        assert ok, (a.describe(), v)


def test_table_dump(cat5):
    text = cat5.table()
    lines = text.splitlines()
    assert len(lines) == len(cat5) + 1
    assert "do nothing" in lines[1]
