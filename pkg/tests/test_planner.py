from __future__ import annotations

import numpy as np
import pytest

from sasgrid.environment import EnvConfig, GridEnv, SimOutcome
from sasgrid.errors import SimulationBudgetExhausted
from sasgrid.grid import DO_NOTHING
from sasgrid.planner import RISK_TOL, CandidateEvaluation, choose, evaluate_candidates, select_action
from sasgrid.policy import forward, init_params, top_k
from sasgrid.scenarios import ScenarioConfig, generate_scenario
from sasgrid.environment import observation_dim


def _states(spec, cat, n, seed=0, config=None):
    """Environments at varied reachable states (random legal play under attacks)."""
    rng = np.random.default_rng(seed)
    sc = generate_scenario(spec, ScenarioConfig(length=288, attack_rate=12.0), seed=seed)
    out = []
    env = GridEnv(spec, sc, config=config)
    env.reset()
    while len(out) < n:
        if env.done or env.t >= sc.length - 2:
            env = GridEnv(spec, sc, config=config)
            env.reset()
        out.append(env.clone())
        a = cat.action_at(int(rng.integers(len(cat)))) if rng.random() < 0.3 else DO_NOTHING
        if not env.is_legal(a)[0] or env.simulate(a).collapsed:
            a = DO_NOTHING
        env.step(a)
    return out


@pytest.fixture(scope="module")
def states(case5, cat5):
    return _states(case5, cat5, 40)


@pytest.fixture(scope="module")
def policy(case5, cat5):
    return init_params(observation_dim(case5), len(cat5), hidden=(16,), seed=5)


def test_k1_plays_the_top_proposal_or_nothing(states, policy, cat5):
    for env in states:
        probs = forward(policy, env.observation)
        top = int(np.argmax(probs))
        action, diag = select_action(env, policy, 1, cat5)
        sim = env.simulate(cat5.action_at(top))
        if sim.legal and sim.risk is not None:
            assert diag.chosen == top and action == cat5.action_at(top)
        else:
            assert diag.fallback and action == DO_NOTHING


def test_larger_k_never_predicts_more_risk(states, policy, cat5):
    for env in states:
        risks, survivors = [], []
        for k in (1, 2, 5, 10, 30, len(cat5)):
            _, d = select_action(env, policy, k, cat5)
            risks.append(np.inf if d.predicted_risk is None else d.predicted_risk)
            survivors.append(d.survivors)
        assert all(b <= a + RISK_TOL for a, b in zip(risks, risks[1:]))
        assert survivors == sorted(survivors)


def test_exhaustive_k_finds_global_minimum(states, policy, cat5):
    for env in states[:15]:
        _, d = select_action(env, policy, len(cat5), cat5)
        best = min((env.simulate(a).risk for a in cat5 if env.simulate(a).legal
                    and env.simulate(a).risk is not None), default=None)
        if best is None:
            assert d.fallback
        else:
            assert d.predicted_risk == pytest.approx(best, abs=RISK_TOL)


def test_selection_leaves_env_untouched(states, policy, cat5):
    env = states[10]
    before = (env.t, env.topology.bus_of.copy(), env.rho.copy(), env.observation.copy())
    select_action(env, policy, 20, cat5)
    assert env.t == before[0]
    assert np.array_equal(env.topology.bus_of, before[1])
    assert np.array_equal(env.rho, before[2]) and np.array_equal(env.observation, before[3])


def test_choose_tie_rules():
    probs = np.array([0.1, 0.5, 0.2, 0.2])
    ev = lambda i, r: CandidateEvaluation(i, True, r, False)
    assert choose([ev(0, 0.5), ev(2, 0.4)], probs).index == 2
    assert choose([ev(0, 0.4), ev(1, 0.4 + RISK_TOL / 2)], probs).index == 1  # near-tie: higher probability
    assert choose([ev(3, 0.4), ev(2, 0.4)], probs).index == 2  # equal probability: lower index
    assert choose([ev(0, 0.4), ev(1, 0.4 + 10 * RISK_TOL)], probs).index == 0
    dead = CandidateEvaluation(1, True, None, True, "islanding")
    illegal = CandidateEvaluation(2, False, None, False)
    assert choose([dead, illegal], probs) is None
    assert choose([], probs) is None


class _CollapsingEnv:
    """Every forecast ends in collapse."""

    def __init__(self, env):
        self.env = env
        self.observation = env.observation

    def simulate(self, action):
        return SimOutcome(True, True, "islanding", None, 0.0, [])


def test_fallback_when_nothing_survives(states, policy, cat5):
    action, d = select_action(_CollapsingEnv(states[0]), policy, 10, cat5)
    assert action == DO_NOTHING and d.fallback and d.survivors == 0 and d.predicted_risk is None


def test_budget_keeps_partial_evaluations(case5, cat5, policy):
    env = _states(case5, cat5, 1, config=EnvConfig(simulation_budget=4))[0]
    action, d = select_action(env, policy, 10, cat5)
    assert d.budget_exhausted and len(d.candidates) == 4
    order = list(top_k(forward(policy, env.observation), 10))
    assert [c.index for c in d.candidates] == order[:4]
    with pytest.raises(SimulationBudgetExhausted):
        env.simulate(DO_NOTHING)


def test_empty_candidate_list(states, cat5):
    assert evaluate_candidates(states[0], cat5, []) == []


def test_bad_k(states, policy, cat5):
    with pytest.raises(ValueError):
        select_action(states[0], policy, 0, cat5)
