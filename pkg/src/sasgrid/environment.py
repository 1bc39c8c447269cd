"""Grid operation as an episodic MDP.

One step is five simulated minutes.  Per step the environment: rejects an
illegal action (it becomes do-nothing), applies the action, applies the
scheduled attacks, advances the chronics and rebalances generation per
island, solves the power flow, and runs the overload protection: a line
loaded above its limit for ``overload_steps`` consecutive steps trips and
stays out for ``recovery_steps``; the flow is re-solved after every trip
until nothing else trips.  The episode ends early when a generator or load
ends up on a bus with no line, when the grid splits into several powered
sub-grids, or when generation cannot serve the demand.

``simulate`` runs the same pipeline on a copy with the current chronics
held one step forward and no attacks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (EpisodeFinished, InfeasibleDispatch, ScenarioError, SimulationBudgetExhausted,
                     SingularSystem)
from .grid import DO_NOTHING, Action, GridSpec, TopologyState, apply_topology_action, initial_topology

TERMINATION_REASONS = ("none", "islanding", "unserved-load", "end-of-scenario")
_TOL = 1e-9
_REASONS = {kernels.ISLANDING: "islanding", kernels.UNSERVED: "unserved-load"}


@dataclass(frozen=True)
class EnvConfig:
    sub_cooldown: int = 3
    line_cooldown: int = 3
    overload_steps: int = 3
    recovery_steps: int = 12
    survival_reward: float = 1.0
    topology_cost: float = 0.01
    redispatch_cost: float = 0.05
    simulation_budget: int | None = None
    minutes_per_step: int = 5
    allow_islands: bool = False  # if True, self-sufficient islands may keep running


# --------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class Attack:
    step: int
    line: int
    duration: int


@dataclass(eq=False)
class Scenario:
    """Chronics and attack schedule driving one episode.

    ``load_mw`` is ``(T, n_load)``; ``renew_cap_mw`` is ``(T, n_renewable)``
    with columns matching ``renewable_ids``.
    """

    load_mw: np.ndarray
    renew_cap_mw: np.ndarray
    renewable_ids: tuple[int, ...]
    attacks: tuple[Attack, ...] = ()
    name: str = "scenario"
    start_step: int = 0

    def __post_init__(self):
        self.load_mw = np.asarray(self.load_mw, dtype=np.float64)
        self.renew_cap_mw = np.asarray(self.renew_cap_mw, dtype=np.float64).reshape(
            len(self.load_mw), len(self.renewable_ids))
        self.renewable_ids = tuple(int(i) for i in self.renewable_ids)
        self.attacks = tuple(sorted(self.attacks, key=lambda a: (a.step, a.line)))
        if self.load_mw.ndim != 2 or len(self.load_mw) < 1:
            raise ScenarioError("load series must be a non-empty (T, n_load) array")
        if np.any(self.load_mw < 0) or not np.all(np.isfinite(self.load_mw)):
            raise ScenarioError("demands must be finite and non-negative")
        if np.any(self.renew_cap_mw < 0) or not np.all(np.isfinite(self.renew_cap_mw)):
            raise ScenarioError("renewable availability must be finite and non-negative")
        for a in self.attacks:
            if not 0 <= a.step < self.length or a.duration < 0:
                raise ScenarioError(f"attack {a} outside the episode")

    @property
    def length(self) -> int:
        return len(self.load_mw)

    def check(self, spec: GridSpec) -> None:
        if self.load_mw.shape[1] != spec.n_load:
            raise ScenarioError(f"scenario has {self.load_mw.shape[1]} loads, grid has {spec.n_load}")
        want = tuple(g.id for g in spec.generators if g.renewable)
        if self.renewable_ids != want:
            raise ScenarioError(f"scenario renewables {self.renewable_ids} != grid renewables {want}")
        for a in self.attacks:
            if not 0 <= a.line < spec.n_line:
                raise ScenarioError(f"attack on unknown line {a.line}")

    def attacks_at(self, step: int) -> list[Attack]:
        return [a for a in self.attacks if a.step == step]

    # -- files ---------------------------------------------------------------

    def write(self, directory, stem: str | None = None) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = stem or self.name
        chron = directory / f"{stem}_chronics.csv"
        att = directory / f"{stem}_attacks.csv"
        with chron.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step"] + [f"load_{i}" for i in range(self.load_mw.shape[1])]
                       + [f"renew_cap_{g}" for g in self.renewable_ids])
            for t in range(self.length):
                w.writerow([t] + [repr(float(v)) for v in self.load_mw[t]]
                           + [repr(float(v)) for v in self.renew_cap_mw[t]])
        with att.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "line_id", "duration"])
            for a in self.attacks:
                w.writerow([a.step, a.line, a.duration])
        return chron, att

    @classmethod
    def read(cls, chronics_path, attacks_path=None, name: str | None = None) -> Scenario:
        chronics_path = Path(chronics_path)
        with chronics_path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ScenarioError(f"{chronics_path}: empty chronics file")
        header = [h.strip() for h in rows[0]]
        if header[0] != "step":
            raise ScenarioError(f"{chronics_path}: first column must be 'step'")
        load_cols = [i for i, h in enumerate(header) if h.startswith("load_")]
        ren_cols = [i for i, h in enumerate(header) if h.startswith("renew_cap_")]
        ren_ids = tuple(int(header[i][len("renew_cap_"):]) for i in ren_cols)
        body = rows[1:]
        try:
            steps = [int(r[0]) for r in body]
            loads = np.array([[float(r[i]) for i in load_cols] for r in body]).reshape(len(body), -1)
            caps = np.array([[float(r[i]) for i in ren_cols] for r in body]).reshape(len(body), -1)
        except (ValueError, IndexError) as exc:
            raise ScenarioError(f"{chronics_path}: malformed row ({exc})") from exc
        if steps != list(range(len(body))):
            raise ScenarioError(f"{chronics_path}: steps must run 0..T-1")
        attacks = []
        if attacks_path is not None and Path(attacks_path).exists():
            with Path(attacks_path).open(newline="", encoding="utf-8") as fh:
                arows = list(csv.reader(fh))
            for r in arows[1:]:
                if r:
                    attacks.append(Attack(int(r[0]), int(r[1]), int(r[2])))
        if name is None:
            name = chronics_path.name.removesuffix("_chronics.csv")
        return cls(loads, caps, ren_ids, tuple(attacks), name=name)


def load_scenarios(directory) -> list[Scenario]:
    directory = Path(directory)
    out = []
    for chron in sorted(directory.glob("*_chronics.csv")):
        stem = chron.name.removesuffix("_chronics.csv")
        out.append(Scenario.read(chron, directory / f"{stem}_attacks.csv", name=stem))
    return out


# --------------------------------------------------------------------------
# environment


@dataclass(frozen=True)
class Violation:
    kind: str  # SubstationCooldown, LineCooldown, GeneratorLimit, RampLimit, ...
    detail: str = ""


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    done: bool
    reason: str
    info: dict = field(default_factory=dict)


class SimOutcome:
    """Result of one ``simulate`` call.  The observation is built on demand."""

    __slots__ = ("legal", "done", "reason", "risk", "reward", "violations", "_env", "_state", "_obs")

    def __init__(self, legal, done, reason, risk, reward, violations, env=None, state=None):
        self.legal = legal
        self.done = done
        self.reason = reason
        self.risk = risk
        self.reward = reward
        self.violations = violations
        self._env = env
        self._state = state
        self._obs = None

    @property
    def collapsed(self) -> bool:
        return self.reason in ("islanding", "unserved-load")

    @property
    def observation(self) -> np.ndarray | None:
        if self._obs is None and self._state is not None:
            self._obs = self._env._observe(self._state)
        return self._obs


@dataclass(eq=False)
class _State:
    t: int
    topo: TopologyState
    delta: np.ndarray  # redispatch offsets, MW
    gen_p: np.ndarray
    load_p: np.ndarray
    flow: np.ndarray
    rho: np.ndarray
    done: bool = False
    reason: str = "none"

    def copy(self) -> _State:
        return _State(self.t, self.topo.copy(), self.delta.copy(), self.gen_p.copy(),
                      self.load_p.copy(), self.flow.copy(), self.rho.copy(), self.done, self.reason)


class GridEnv:
    """Single-threaded environment handle over one scenario."""

    def __init__(self, spec: GridSpec, scenario: Scenario, seed: int = 0,
                 config: EnvConfig | None = None):
        scenario.check(spec)
        self.spec = spec
        self.scenario = scenario
        self.seed = seed
        self.config = config or EnvConfig()
        self._prepare()
        self.state: _State | None = None
        self.sim_calls = 0

    def _prepare(self):
        s = self.spec
        self._p_min = np.array([g.p_min for g in s.generators], dtype=np.float64)
        self._p_max = np.array([g.p_max for g in s.generators], dtype=np.float64)
        self._ramp = np.array([g.ramp for g in s.generators], dtype=np.float64)
        self._renew = np.array([g.renewable for g in s.generators], dtype=bool)
        self._disp = ~self._renew
        self._renew_u8 = self._renew.astype(np.uint8)
        self._inv_x = 1.0 / s.reactance
        self._renew_col = {gid: j for j, gid in enumerate(self.scenario.renewable_ids)}
        self._renew_idx = np.array(self.scenario.renewable_ids, dtype=np.int64)
        self._gen0 = 2 * s.n_line
        self._load0 = 2 * s.n_line + s.n_gen
        self._nominal = np.array([ld.nominal_mw if ld.nominal_mw > 0 else 1.0 for ld in s.loads])
        self._base = s.base_mva
        self.obs_dim = observation_dim(s)

    # -- helpers ---------------------------------------------------------------

    def _available(self, t: int) -> np.ndarray:
        avail = np.zeros(self.spec.n_gen)
        if len(self._renew_idx):
            avail[self._renew_idx] = np.minimum(self.scenario.renew_cap_mw[t], self._p_max[self._renew_idx])
        return avail

    def _settle(self, topo: TopologyState, load_p, avail, delta, trips: bool = True):
        """Balance, solve and run the overload cascade on ``topo`` in place.

        Returns ``(reason, gen_p, flow, rho, tripped)``; reason is ``none``,
        ``islanding`` or ``unserved-load``.  ``topo.overload_counter`` holds
        the counters from before the step on entry.
        """
        s, cfg = self.spec, self.config
        gen_p = np.empty(s.n_gen)
        flow = np.empty(s.n_line)
        rho = np.empty(s.n_line)
        tripped = np.zeros(s.n_line, dtype=np.uint8)
        code = kernels.settle(
            s.slot_substation, s.n_nodes, s.n_line, topo.bus_of,
            topo.line_connected.view(np.uint8), topo.line_cooldown, topo.overload_counter,
            self._inv_x, s.limit, self._p_min, self._p_max, self._renew_u8,
            np.ascontiguousarray(delta, dtype=np.float64), avail,
            np.ascontiguousarray(load_p, dtype=np.float64), self._base,
            cfg.overload_steps if trips else np.iinfo(np.int64).max, cfg.recovery_steps,
            gen_p, flow, rho, tripped, allow_islands=cfg.allow_islands)
        if code == kernels.SINGULAR:
            raise SingularSystem("singular susceptance matrix")
        if code != kernels.SETTLED:
            return _REASONS[code], None, None, None, []
        return "none", gen_p, flow, rho, np.flatnonzero(tripped).tolist()

    def _advance(self, st: _State, action: Action, load_p, avail, attacks):
        """Run one step of the pipeline on ``st`` in place.

        The action must already be legal.  Returns ``(cost, info)``.
        """
        cfg = self.config
        topo = st.topo
        for arr in (topo.line_cooldown, topo.substation_cooldown):
            np.subtract(arr, 1, out=arr)
            np.maximum(arr, 0, out=arr)
        cost = 0.0
        if action.kind != "do_nothing":
            if action.is_topological:
                topo = apply_topology_action(self.spec, topo, action, cfg.sub_cooldown, cfg.line_cooldown)
                cost = cfg.topology_cost
            elif action.kind == "redispatch":
                st.delta[action.generator] += action.delta_mw
                cost = cfg.redispatch_cost * abs(action.delta_mw) / self._p_max[action.generator]
        attacked = []
        for att in attacks:
            ln = att.line
            if topo.line_connected[ln]:
                attacked.append(ln)
            topo.bus_of[2 * ln] = topo.bus_of[2 * ln + 1] = 0
            topo.line_connected[ln] = False
            topo.overload_counter[ln] = 0
            topo.line_cooldown[ln] = max(topo.line_cooldown[ln], att.duration)
        st.t += 1
        st.load_p = np.asarray(load_p, dtype=np.float64)
        st.topo = topo
        reason, gen_p, flow, rho, tripped = self._settle(topo, st.load_p, avail, st.delta)
        info = {"attacked": attacked, "tripped": tripped}
        if reason != "none":
            st.done, st.reason = True, reason
            return cost, info
        st.gen_p, st.flow, st.rho = gen_p, flow, rho
        return cost, info

    def _observe(self, st: _State) -> np.ndarray:
        return build_observation(self, st)

    # -- public API --------------------------------------------------------------

    def reset(self) -> np.ndarray:
        topo = initial_topology(self.spec)
        load_p = self.scenario.load_mw[0].copy()
        avail = self._available(0)
        delta = np.zeros(self.spec.n_gen)
        if load_p.sum() > self._p_max[self._disp].sum() + avail.sum() + _TOL:
            raise InfeasibleDispatch(
                f"step-0 demand {load_p.sum():.1f} MW exceeds available generation")
        reason, gen_p, flow, rho, _ = self._settle(topo, load_p, avail, delta, trips=False)
        if reason != "none":
            raise InfeasibleDispatch(f"reference topology cannot be balanced ({reason})")
        topo.overload_counter[:] = 0
        self.state = _State(0, topo, delta, gen_p, load_p, flow, rho)
        self.sim_calls = 0
        return self._observe(self.state)

    @property
    def t(self) -> int:
        return self.state.t

    @property
    def done(self) -> bool:
        return self.state.done

    @property
    def observation(self) -> np.ndarray:
        return self._observe(self.state)

    @property
    def topology(self) -> TopologyState:
        return self.state.topo

    @property
    def rho(self) -> np.ndarray:
        return self.state.rho

    @property
    def gen_p(self) -> np.ndarray:
        return self.state.gen_p

    def risk(self) -> float:
        r = self.state.rho[self.state.topo.line_connected]
        return float(r.max()) if r.size else 0.0

    def clone(self) -> GridEnv:
        other = GridEnv.__new__(GridEnv)
        other.__dict__.update(self.__dict__)
        other.state = self.state.copy()
        return other

    def is_legal(self, action: Action) -> tuple[bool, list[Violation]]:
        """Rule checks that need no power flow (cooldowns, limits, one substation)."""
        s, topo = self.spec, self.state.topo
        out: list[Violation] = []
        if action.kind == "do_nothing":
            return True, out
        if action.kind == "set_bus":
            sub = action.substation
            if not 0 <= sub < s.n_sub:
                return False, [Violation("UnknownElement", f"substation {sub}")]
            if len(action.buses) != len(s.sub_slots[sub]) or any(b not in (1, 2) for b in action.buses):
                return False, [Violation("UnknownElement", f"bad bus vector for substation {sub}")]
            if topo.substation_cooldown[sub] > 0:
                out.append(Violation("SubstationCooldown", f"substation {sub}: {topo.substation_cooldown[sub]}"))
        elif action.kind == "set_line":
            ln = action.line
            if not 0 <= ln < s.n_line:
                return False, [Violation("UnknownElement", f"line {ln}")]
            if action.connect and (len(action.buses) not in (0, 2) or any(b not in (1, 2) for b in action.buses)):
                return False, [Violation("UnknownElement", f"bad reconnection buses for line {ln}")]
            if topo.line_cooldown[ln] > 0:
                out.append(Violation("LineCooldown", f"line {ln}: {topo.line_cooldown[ln]}"))
        elif action.kind == "redispatch":
            g = action.generator
            if not 0 <= g < s.n_gen:
                return False, [Violation("UnknownElement", f"generator {g}")]
            if self._renew[g]:
                out.append(Violation("NotDispatchable", f"generator {g} is renewable"))
            target = self.state.gen_p[g] + action.delta_mw
            if target > self._p_max[g] + _TOL or target < self._p_min[g] - _TOL:
                out.append(Violation("GeneratorLimit", f"generator {g} target {target:.2f} MW"))
            if abs(action.delta_mw) > self._ramp[g] + _TOL:
                out.append(Violation("RampLimit", f"generator {g} delta {action.delta_mw:+.2f} MW"))
        else:
            return False, [Violation("UnknownElement", f"action kind {action.kind!r}")]
        return not out, out

    def step(self, action: Action = DO_NOTHING) -> StepOutcome:
        st = self.state
        if st.done:
            raise EpisodeFinished("episode is over; call reset()")
        legal, violations = self.is_legal(action)
        if not legal:
            action = DO_NOTHING
        st.topo = st.topo.copy()
        t_next = st.t + 1
        sc = self.scenario
        cost, info = self._advance(st, action, sc.load_mw[t_next], self._available(t_next),
                                   sc.attacks_at(t_next))
        self.sim_calls = 0
        if st.done:
            reward = 0.0
        else:
            reward = self.config.survival_reward - cost
            if st.t >= sc.length - 1:
                st.done, st.reason = True, "end-of-scenario"
        info.update(
            cost=cost,
            illegal=not legal,
            violations=violations,
            risk=self.risk() if st.reason in ("none", "end-of-scenario") else float("nan"),
            overloaded=int(np.sum(st.rho > 1.0)) if st.reason in ("none", "end-of-scenario") else 0,
        )
        return StepOutcome(self._observe(st), reward, st.done, st.reason, info)

    def simulate(self, action: Action = DO_NOTHING) -> SimOutcome:
        """Forecast one step ahead with persisted chronics and no attacks."""
        st = self.state
        if st.done:
            raise EpisodeFinished("episode is over; call reset()")
        budget = self.config.simulation_budget
        if budget is not None and self.sim_calls >= budget:
            raise SimulationBudgetExhausted(f"simulation budget of {budget} per step exhausted")
        self.sim_calls += 1
        legal, violations = self.is_legal(action)
        if not legal:
            return SimOutcome(False, False, "none", None, 0.0, violations)
        sim = st.copy()
        cost, _ = self._advance(sim, action, st.load_p, self._available(st.t), ())
        if sim.done:
            return SimOutcome(False, True, sim.reason, None, 0.0, [Violation("Collapse", sim.reason)],
                              self, sim)
        if sim.t >= self.scenario.length - 1:
            sim.done, sim.reason = True, "end-of-scenario"
        r = sim.rho[sim.topo.line_connected]
        risk = float(r.max()) if r.size else 0.0
        return SimOutcome(True, sim.done, sim.reason, risk, self.config.survival_reward - cost,
                          violations, self, sim)


def observation_dim(spec: GridSpec) -> int:
    return 3 * spec.n_line + spec.n_sub + spec.n_gen + spec.n_load + 2 * spec.n_slots + 3


def build_observation(env: GridEnv, st: _State) -> np.ndarray:
    """Flat feature vector; its layout depends on the grid only."""
    s, cfg, topo = env.spec, env.config, st.topo
    p_max = np.where(env._p_max > 0, env._p_max, 1.0)
    minutes = (env.scenario.start_step + st.t) * cfg.minutes_per_step
    angle = 2.0 * math.pi * (minutes % 1440) / 1440.0
    bus = topo.bus_of
    return np.concatenate((
        st.rho,
        topo.line_connected.astype(np.float64),
        topo.line_cooldown / max(cfg.recovery_steps, 1),
        topo.substation_cooldown / max(cfg.sub_cooldown, 1),
        st.gen_p / p_max,
        st.load_p / env._nominal,
        (bus == 1).astype(np.float64),
        (bus == 2).astype(np.float64),
        (math.sin(angle), math.cos(angle), st.t / max(env.scenario.length - 1, 1)),
    ))


# -- functional facade ---------------------------------------------------------


def reset(spec: GridSpec, scenario: Scenario, seed: int = 0, config: EnvConfig | None = None):
    env = GridEnv(spec, scenario, seed, config)
    return env, env.reset()


def step(env: GridEnv, action: Action = DO_NOTHING) -> StepOutcome:
    return env.step(action)


def simulate(env: GridEnv, action: Action = DO_NOTHING) -> SimOutcome:
    return env.simulate(action)


def is_legal(env: GridEnv, action: Action) -> tuple[bool, list[Violation]]:
    return env.is_legal(action)


def flat_scenario(spec: GridSpec, length: int, load_scale: float = 1.0,
                  renew_scale: float = 0.5, attacks=()) -> Scenario:
    """Constant chronics at nominal demand; handy for tests and smoke runs."""
    loads = np.tile([ld.nominal_mw * load_scale for ld in spec.loads], (length, 1))
    ren = [g for g in spec.generators if g.renewable]
    caps = np.tile([g.p_max * renew_scale for g in ren], (length, 1)).reshape(length, len(ren))
    return Scenario(loads, caps, tuple(g.id for g in ren), tuple(attacks), name="flat")


__all__ = [
    "Attack", "EnvConfig", "GridEnv", "Scenario", "SimOutcome", "StepOutcome", "Violation",
    "TERMINATION_REASONS", "build_observation", "flat_scenario", "is_legal", "load_scenarios",
    "observation_dim", "reset", "simulate", "step",
]
