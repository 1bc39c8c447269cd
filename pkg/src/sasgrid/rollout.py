"""Episode runners shared by training, evaluation and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .actions import ActionCatalogue
from .environment import EnvConfig, GridEnv, Scenario
from .grid import DO_NOTHING, GridSpec
from .planner import select_action
from .policy import PolicyParams


@dataclass(frozen=True)
class StepRecord:
    step: int
    action: int
    reward: float
    risk: float
    done: bool
    k: int = 0
    survivors: int = 0
    predicted_risk: float = float("nan")
    fallback: bool = False


@dataclass
class EpisodeResult:
    total_return: float
    steps: int  # steps survived
    mean_risk: float
    fallbacks: int
    reason: str
    played: int = 0  # steps taken, including a collapsing one
    records: list[StepRecord] = field(default_factory=list)

    @property
    def fallback_rate(self) -> float:
        return self.fallbacks / self.played if self.played else 0.0


def run_episode(spec: GridSpec, scenario: Scenario, params: PolicyParams | None, k: int,
                catalogue: ActionCatalogue, config: EnvConfig | None = None, seed: int = 0,
                max_steps: int | None = None, gamma: float = 1.0, record: bool = False) -> EpisodeResult:
    """Greedy SAS rollout; ``params=None`` plays do-nothing throughout."""
    env = GridEnv(spec, scenario, seed, config)
    obs = env.reset()
    limit = scenario.length - 1 if max_steps is None else min(max_steps, scenario.length - 1)
    total, disc, risks, fallbacks, steps = 0.0, 1.0, [], 0, 0
    records = []
    while steps < limit and not env.done:
        if params is None:
            action, diag = DO_NOTHING, None
            index = 0
        else:
            action, diag = select_action(env, params, k, catalogue, obs)
            index = diag.chosen
            fallbacks += diag.fallback
        out = env.step(action)
        obs = out.observation
        total += disc * out.reward
        disc *= gamma
        steps += 1
        risk = out.info["risk"]
        if not np.isnan(risk):
            risks.append(risk)
        if record:
            records.append(StepRecord(
                env.t, index, out.reward, risk, out.done,
                diag.k if diag else 0, diag.survivors if diag else 0,
                diag.predicted_risk if diag and diag.predicted_risk is not None else float("nan"),
                diag.fallback if diag else False))
    # a collapse ends the episode; the collapsing step earns nothing
    survived = steps - (1 if env.state.reason in ("islanding", "unserved-load") else 0)
    return EpisodeResult(total, survived, float(np.mean(risks)) if risks else 0.0, fallbacks,
                         env.state.reason, steps, records)
