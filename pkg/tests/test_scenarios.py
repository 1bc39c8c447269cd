from __future__ import annotations

import numpy as np
import pytest

from sasgrid.scenarios import (STEPS_PER_DAY, ScenarioConfig, demand_profile, generate_scenario,
                               generate_scenarios, renewable_profile, write_scenarios)


def test_one_day_is_288_steps():
    assert STEPS_PER_DAY == 288
    assert 24 * 60 // ScenarioConfig().minutes_per_step == 288


def test_zero_rate_has_no_attacks(case5, tmp_path):
    scs = generate_scenarios(case5, 5, ScenarioConfig(attack_rate=0.0), seed=1)
    assert all(sc.attacks == () for sc in scs)
    write_scenarios(scs, tmp_path)
    assert (tmp_path / "case5_0000_attacks.csv").read_text() == "step,line_id,duration\n"


def test_same_seed_same_bytes(case14, tmp_path):
    cfg = ScenarioConfig(length=100)
    write_scenarios(generate_scenarios(case14, 3, cfg, seed=7), tmp_path / "a")
    write_scenarios(generate_scenarios(case14, 3, cfg, seed=7), tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    write_scenarios(generate_scenarios(case14, 3, cfg, seed=8), tmp_path / "c")
    assert (tmp_path / "a/case14_0000_chronics.csv").read_bytes() != (tmp_path / "c/case14_0000_chronics.csv").read_bytes()


def test_demand_is_daily_sinusoid(case5):
    cfg = ScenarioConfig(length=288, load_noise=0.0)
    d = demand_profile(case5, cfg, np.random.default_rng(0))
    assert d.shape == (288, case5.n_load)
    ratio = d[:, 0] / case5.loads[0].nominal_mw
    assert ratio.max() == pytest.approx(1.15, abs=1e-3) and ratio.min() == pytest.approx(0.85, abs=1e-3)
    assert abs(int(np.argmax(ratio)) - 16 * 12) <= 1  # peak at 16:00


def test_renewables_are_bounded_walks(case14):
    cfg = ScenarioConfig(length=2000)
    caps = renewable_profile(case14, cfg, np.random.default_rng(0))
    pmax = np.array([g.p_max for g in case14.generators if g.renewable])
    frac = caps / pmax
    assert frac.min() >= 0.1 - 1e-12 and frac.max() <= 0.9 + 1e-12
    assert np.abs(np.diff(frac, axis=0)).max() <= 0.03 * 4


def test_attacks_respect_schedule(case14):
    cfg = ScenarioConfig(length=288 * 10, attack_rate=3.0)
    sc = generate_scenario(case14, cfg, seed=3)
    attackable = {ln.id for ln in case14.lines if ln.attackable}
    assert 15 <= len(sc.attacks) <= 50  # about 30 expected over ten days
    for a in sc.attacks:
        assert a.line in attackable
        assert 12 <= a.duration <= 24
        assert cfg.attack_margin <= a.step < cfg.length


@pytest.mark.parametrize("kw", [dict(length=1), dict(attack_rate=-1.0), dict(attack_duration=(5, 2)),
                                dict(renew_bounds=(0.5, 1.5))])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ScenarioConfig(**kw)
