"""Search with an action set: score the policy's top-K proposals by simulation.

Each step the policy proposes its ``K`` most probable actions.  Every
candidate is run through the environment's one-step forecast; candidates
that are illegal or predicted to collapse the grid are dropped, and the
survivor with the lowest predicted risk (largest line loading) is played.
Risks within ``RISK_TOL`` of the minimum count as tied (two topologies that
differ only in where a dead line hangs give the same flows up to rounding);
ties go to the higher policy probability, then to the lower catalogue index.
When nothing survives the agent plays do-nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .actions import ActionCatalogue
from .environment import GridEnv, Violation
from .errors import SimulationBudgetExhausted
from .grid import DO_NOTHING, Action
from .policy import PolicyParams, forward, top_k

DEFAULT_K = 100
RISK_TOL = 1e-9


@dataclass(frozen=True)
class CandidateEvaluation:
    index: int
    legal: bool
    risk: float | None  # set only when legal and the forecast did not collapse
    done: bool
    reason: str = "none"
    violations: tuple[Violation, ...] = ()

    @property
    def survives(self) -> bool:
        return self.legal and self.risk is not None


@dataclass
class Diagnostics:
    chosen: int
    k: int
    survivors: int
    fallback: bool
    predicted_risk: float | None
    candidates: list[CandidateEvaluation] = field(default_factory=list)
    budget_exhausted: bool = False


def evaluate_candidates(env: GridEnv, catalogue: ActionCatalogue, indices) -> list[CandidateEvaluation]:
    """One forecast per candidate, in the given order; the env is left as is."""
    out: list[CandidateEvaluation] = []
    for i in indices:
        i = int(i)
        action = catalogue.action_at(i)
        try:
            sim = env.simulate(action)
        except SimulationBudgetExhausted as exc:
            raise SimulationBudgetExhausted(str(exc), partial=out) from None
        out.append(CandidateEvaluation(i, sim.legal, sim.risk, sim.done, sim.reason, tuple(sim.violations)))
    return out


def choose(evals, probs, tol: float = RISK_TOL) -> CandidateEvaluation | None:
    """Lowest-risk survivor; near-ties by higher probability, then lower index."""
    alive = [ev for ev in evals if ev.survives]
    if not alive:
        return None
    floor = min(ev.risk for ev in alive)
    tied = [ev for ev in alive if ev.risk <= floor + tol]
    return min(tied, key=lambda ev: (-probs[ev.index], ev.index))


def select_action(env: GridEnv, params: PolicyParams, k: int, catalogue: ActionCatalogue,
                  obs: np.ndarray | None = None) -> tuple[Action, Diagnostics]:
    if k < 1:
        raise ValueError("K must be at least 1")
    probs = forward(params, env.observation if obs is None else obs)
    cand = top_k(probs, k)
    exhausted = False
    try:
        evals = evaluate_candidates(env, catalogue, cand)
    except SimulationBudgetExhausted as exc:
        evals, exhausted = list(exc.partial), True
    best = choose(evals, probs)
    n_ok = sum(ev.survives for ev in evals)
    if best is None:
        return DO_NOTHING, Diagnostics(0, len(cand), 0, True, None, evals, exhausted)
    return catalogue.action_at(best.index), Diagnostics(best.index, len(cand), n_ok, False, best.risk,
                                                        evals, exhausted)
