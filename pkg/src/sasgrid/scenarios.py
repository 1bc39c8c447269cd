"""Synthetic chronics and attack schedules.

Demand follows a daily sinusoid (trough at 04:00, peak at 16:00) times
multiplicative Gaussian noise.  Renewable availability is a bounded random
walk per generator.  Attacks are drawn per simulated day: a Poisson number of
forced outages on attackable lines at uniform times inside the day.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .environment import Attack, Scenario
from .grid import GridSpec

STEPS_PER_DAY = 288


@dataclass(frozen=True)
class ScenarioConfig:
    length: int = STEPS_PER_DAY
    attack_rate: float = 3.0  # expected attacks per simulated day
    attack_duration: tuple[int, int] = (12, 24)  # inclusive range, in steps
    attack_margin: int = 12  # no attack within this many steps of the start
    load_amplitude: float = 0.15
    load_noise: float = 0.02
    load_level: float = 1.0
    renew_start: float = 0.5  # initial availability as a fraction of p_max
    renew_step: float = 0.03
    renew_bounds: tuple[float, float] = (0.1, 0.9)
    minutes_per_step: int = 5

    def __post_init__(self):
        if self.length < 2:
            raise ValueError("scenario length must be at least 2 steps")
        if self.attack_rate < 0:
            raise ValueError("attack rate must be non-negative")
        lo, hi = self.attack_duration
        if not 0 < lo <= hi:
            raise ValueError("attack duration range must satisfy 0 < lo <= hi")
        if not 0.0 <= self.renew_bounds[0] <= self.renew_bounds[1] <= 1.0:
            raise ValueError("renewable bounds must lie in [0, 1]")


def demand_profile(spec: GridSpec, cfg: ScenarioConfig, rng: np.random.Generator,
                   start_step: int = 0) -> np.ndarray:
    t = np.arange(start_step, start_step + cfg.length)
    hours = (t * cfg.minutes_per_step / 60.0) % 24.0
    shape = cfg.load_level * (1.0 + cfg.load_amplitude * np.sin(2.0 * np.pi * (hours - 10.0) / 24.0))
    nominal = np.array([ld.nominal_mw for ld in spec.loads])
    noise = 1.0 + cfg.load_noise * rng.standard_normal((cfg.length, spec.n_load))
    return np.maximum(shape[:, None] * nominal[None, :] * noise, 0.0)


def renewable_profile(spec: GridSpec, cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    ren = [g for g in spec.generators if g.renewable]
    lo, hi = cfg.renew_bounds
    out = np.empty((cfg.length, len(ren)))
    level = np.full(len(ren), cfg.renew_start)
    for t in range(cfg.length):
        out[t] = level
        level = np.clip(level + cfg.renew_step * rng.standard_normal(len(ren)), lo, hi)
    return out * np.array([g.p_max for g in ren])[None, :]


def sample_attacks(spec: GridSpec, cfg: ScenarioConfig, rng: np.random.Generator) -> tuple[Attack, ...]:
    targets = [ln.id for ln in spec.lines if ln.attackable]
    if cfg.attack_rate == 0 or not targets:
        return ()
    attacks = {}
    for day_start in range(0, cfg.length, STEPS_PER_DAY):
        first = max(day_start, cfg.attack_margin)
        last = min(day_start + STEPS_PER_DAY, cfg.length)
        count = rng.poisson(cfg.attack_rate)
        if first >= last:
            continue
        for _ in range(count):
            step = int(rng.integers(first, last))
            line = int(rng.choice(targets))
            duration = int(rng.integers(cfg.attack_duration[0], cfg.attack_duration[1] + 1))
            attacks.setdefault((step, line), Attack(step, line, duration))
    return tuple(attacks[k] for k in sorted(attacks))


def generate_scenario(spec: GridSpec, cfg: ScenarioConfig, seed: int, name: str | None = None) -> Scenario:
    rng = np.random.default_rng(seed)
    loads = demand_profile(spec, cfg, rng)
    caps = renewable_profile(spec, cfg, rng)
    attacks = sample_attacks(spec, cfg, rng)
    ren_ids = tuple(g.id for g in spec.generators if g.renewable)
    return Scenario(loads, caps, ren_ids, attacks, name=name or f"scenario_{seed}")


def generate_scenarios(spec: GridSpec, count: int, cfg: ScenarioConfig, seed: int) -> list[Scenario]:
    """``count`` independent scenarios; scenario ``i`` uses a child of ``seed``."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [generate_scenario(spec, cfg, int(c.generate_state(1, np.uint64)[0]), name=f"{spec.name}_{i:04d}")
            for i, c in enumerate(children)]


def write_scenarios(scenarios, directory) -> list[Path]:
    out = []
    for sc in scenarios:
        out.extend(sc.write(directory, sc.name))
    return out
