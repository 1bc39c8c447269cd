"""Evolution Strategies over full-episode returns of the SAS agent.

Each iteration samples ``n`` perturbations of the policy (mirrored pairs by
default), rolls every perturbed policy out through the worker pool, and
moves the parameters along ``g = 1/(n sigma) * sum_i w_i eps_i`` where
``w_i`` is the return (or its centered rank).  Noise vectors never travel:
a task carries a 64-bit seed and every party rebuilds ``eps`` from it.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .actions import ActionCatalogue
from .environment import EnvConfig
from .errors import ConfigError, WorkerPoolFailure
from .grid import GridSpec
from .planner import DEFAULT_K
from .logs import MetricsLog, write_replay
from .policy import PolicyParams, load_checkpoint, noise, save_checkpoint
from .rollout import run_episode
from .wire import TaskMessage as Task


@dataclass(frozen=True)
class TrainConfig:
    population: int = 32  # n
    sigma: float = 0.05
    lr: float = 0.05
    k: int = DEFAULT_K
    episodes_per_perturbation: int = 1
    scenario_seed: int = 0
    iterations: int = 50
    gamma: float = 1.0
    antithetic: bool = True
    rank_shaping: bool = True
    seed: int = 0
    hidden: tuple[int, ...] = (256, 128, 64)
    max_steps: int = 0  # 0 means the whole scenario
    quorum: float = 1.0
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.population < 1:
            raise ConfigError("population must be positive")
        if self.antithetic and self.population % 2:
            raise ConfigError("antithetic sampling needs an even population")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.k < 1:
            raise ConfigError("K must be at least 1")
        if self.episodes_per_perturbation < 1:
            raise ConfigError("episodes per perturbation must be positive")
        if not 0 < self.quorum <= 1:
            raise ConfigError("quorum must lie in (0, 1]")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be non-negative")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be non-negative")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def replace(self, **changes) -> TrainConfig:
        return TrainConfig(**{**asdict(self), **changes})

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class RolloutResult:
    task_id: int
    seed: int
    sign: int
    total_return: float
    steps: int
    mean_risk: float
    scenario_id: int
    worker_id: int = 0
    wall_time: float = 0.0


@dataclass
class IterationStats:
    iteration: int
    mean_return: float
    std_return: float
    max_return: float
    grad_norm: float
    mean_steps: float
    wall_time: float
    results: int


# -- gradient ----------------------------------------------------------------------


def centered_ranks(x) -> np.ndarray:
    """Ranks scaled to [-0.5, 0.5]; tied values share their average rank."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 2:
        return np.zeros(n)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(n)
    xs = x[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i: j + 1]] = 0.5 * (i + j)
        i = j + 1
    return ranks / (n - 1) - 0.5


def perturbation_seed(seed: int, iteration: int, j: int) -> int:
    lo, hi = np.random.SeedSequence([seed, iteration, j]).generate_state(2, np.uint32)
    return int(lo) | int(hi) << 32


def make_tasks(cfg: TrainConfig, iteration: int, n_scenarios: int) -> list[Task]:
    """Tasks for one iteration, in task-id order.

    All perturbations see the same scenario(s), rotated by iteration index.
    """
    if n_scenarios < 1:
        raise ConfigError("training needs at least one scenario")
    e = cfg.episodes_per_perturbation
    pairs = cfg.population // 2 if cfg.antithetic else cfg.population
    tasks, tid = [], 0
    for j in range(pairs):
        s = perturbation_seed(cfg.seed, iteration, j)
        for sign in ((1, -1) if cfg.antithetic else (1,)):
            for ep in range(e):
                sid = (iteration * e + ep) % n_scenarios
                tasks.append(Task(tid, iteration, s, sign, cfg.sigma, sid, cfg.k, cfg.max_steps))
                tid += 1
    return tasks


def estimate_gradient(results, cfg: TrainConfig, dim: int, noise_fn=noise) -> np.ndarray:
    """``1/(n sigma) * sum_i w_i eps_i`` with a reduction order fixed by task id.

    Returns of the same perturbation (several episodes) are averaged first.
    ``w_i`` is the raw return, or its centered rank with ``rank_shaping``.
    """
    results = sorted(results, key=lambda r: r.task_id)
    keys, returns = [], {}
    for r in results:
        key = (r.seed, r.sign)
        if key not in returns:
            keys.append(key)
            returns[key] = []
        returns[key].append(r.total_return)
    if not keys:
        return np.zeros(dim)
    ret = np.array([math.fsum(returns[k]) / len(returns[k]) for k in keys])
    w = centered_ranks(ret) if cfg.rank_shaping else ret
    # fold mirrored pairs into one coefficient per seed
    coef: dict[int, float] = {}
    for (s, sign), wi in zip(keys, w):
        coef[s] = coef.get(s, 0.0) + sign * wi
    g = np.zeros(dim)
    for s, c in coef.items():
        if c != 0.0:
            g += c * noise_fn(s, dim)
    return g / (len(keys) * cfg.sigma) + 0.0


def apply_update(params: PolicyParams, grad: np.ndarray, lr: float) -> PolicyParams:
    return params.with_theta(params.theta + lr * grad)


# -- iteration -----------------------------------------------------------------------


def run_iteration(params: PolicyParams, cfg: TrainConfig, pool, iteration: int,
                  n_scenarios: int, timeout: float | None = None):
    """One ES step through ``pool``; returns ``(new_params, stats)``."""
    t0 = time.perf_counter()
    tasks = make_tasks(cfg, iteration, n_scenarios)
    need = math.ceil(cfg.quorum * len(tasks))
    pool.broadcast(params, iteration)
    try:
        results = pool.run(tasks, timeout=timeout)
    except WorkerPoolFailure as exc:  # includes Timeout; keep going if the quorum holds
        results = exc.results
        if len(results) < need:
            raise
    if len(results) < need:
        raise WorkerPoolFailure(f"only {len(results)} of {len(tasks)} results (quorum {need})", results)
    grad = estimate_gradient(results, cfg, params.n_params)
    new = apply_update(params, grad, cfg.lr)
    r = np.array([x.total_return for x in results])
    stats = IterationStats(iteration, float(r.mean()), float(r.std()), float(r.max()),
                           float(np.linalg.norm(grad)), float(np.mean([x.steps for x in results])),
                           time.perf_counter() - t0, len(results))
    return new, stats


# -- evaluators run inside workers ---------------------------------------------------------


class SasEvaluator:
    """Rolls out the perturbed policy with the SAS planner on one scenario."""

    def __init__(self, spec: GridSpec, catalogue: ActionCatalogue, scenarios, env_config: EnvConfig | None = None,
                 gamma: float = 1.0):
        self.spec = spec
        self.catalogue = catalogue
        self.scenarios = list(scenarios)
        self.env_config = env_config
        self.gamma = gamma

    def __call__(self, params: PolicyParams, task: Task):
        sc = self.scenarios[task.scenario_id % len(self.scenarios)]
        res = run_episode(self.spec, sc, params, task.k, self.catalogue, self.env_config,
                          max_steps=task.max_steps or None, gamma=self.gamma)
        return res.total_return, res.steps, res.mean_risk


class QuadraticEvaluator:
    """Black-box stub ``-||theta - target||^2``."""

    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)

    def __call__(self, params: PolicyParams, task: Task):
        d = params.theta - self.target
        return -float(d @ d), 0, 0.0


# -- evaluation ----------------------------------------------------------------------


@dataclass
class EvalReport:
    k: int
    mean_return: float
    mean_steps: float
    fallback_rate: float
    returns: list[float] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)
    reasons: list[str] = field(default_factory=list)


def evaluate(params: PolicyParams | None, k: int, spec: GridSpec, catalogue: ActionCatalogue, scenarios,
             env_config: EnvConfig | None = None, max_steps: int | None = None, gamma: float = 1.0,
             replay_dir=None) -> EvalReport:
    """Greedy SAS rollouts (no noise); ``params=None`` is the do-nothing baseline."""
    scenarios = list(scenarios)
    if not scenarios:
        raise ConfigError("evaluation needs at least one scenario")
    rets, steps, reasons, fb, played = [], [], [], 0, 0
    for sc in scenarios:
        res = run_episode(spec, sc, params, k, catalogue, env_config, max_steps=max_steps, gamma=gamma,
                          record=replay_dir is not None)
        rets.append(res.total_return)
        steps.append(res.steps)
        reasons.append(res.reason)
        fb += res.fallbacks
        played += res.played
        if replay_dir is not None:
            write_replay(Path(replay_dir) / f"{sc.name}_k{k}.replay", res.records)
    return EvalReport(k, float(np.mean(rets)), float(np.mean(steps)), fb / max(played, 1),
                      rets, steps, reasons)


def evaluate_sweep(params, ks, spec, catalogue, scenarios, **kw) -> dict[int, EvalReport]:
    return {int(k): evaluate(params, int(k), spec, catalogue, scenarios, **kw) for k in ks}



# -- training loop ---------------------------------------------------------------------

CHECKPOINT_DIR = "checkpoints"
LATEST = "latest.sasp"
METRICS = "metrics.tsv"


@dataclass
class TrainResult:
    params: PolicyParams
    iteration: int  # iterations completed
    history: list[IterationStats] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def checkpoint_path(run_dir, iteration: int) -> Path:
    return Path(run_dir) / CHECKPOINT_DIR / f"iter_{iteration:05d}.sasp"


def train(params: PolicyParams, cfg: TrainConfig, pool, n_scenarios: int, run_dir=None,
          start_iteration: int = 0, timeout: float | None = None, on_iteration=None) -> TrainResult:
    """Run ``cfg.iterations`` ES steps, counting from ``start_iteration``.

    With ``run_dir`` every iteration appends to ``metrics.tsv`` and a
    checkpoint (tagged with the number of completed iterations) is saved
    every ``cfg.checkpoint_every`` iterations and after the last one.
    """
    metrics = MetricsLog(Path(run_dir) / METRICS) if run_dir is not None else None
    out = TrainResult(params, start_iteration)
    for it in range(start_iteration, cfg.iterations):
        params, stats = run_iteration(params, cfg, pool, it, n_scenarios, timeout)
        out.history.append(stats)
        done = it + 1
        if metrics is not None:
            metrics.append(stats)
            every = cfg.checkpoint_every
            if (every > 0 and done % every == 0) or done == cfg.iterations:
                out.checkpoints.append(save_checkpoint(checkpoint_path(run_dir, done), params, done))
                save_checkpoint(Path(run_dir) / LATEST, params, done)
        if on_iteration is not None:
            on_iteration(stats)
        out.params, out.iteration = params, done
    return out


def resume_state(run_dir, like: PolicyParams | None = None) -> tuple[PolicyParams, int] | None:
    """Latest checkpoint in ``run_dir`` and its iteration count, or None.

    Metrics recorded after that checkpoint are dropped so the log matches an
    uninterrupted run once training continues.
    """
    path = Path(run_dir) / LATEST
    if not path.exists():
        return None
    params, iteration = load_checkpoint(path, like)
    metrics = MetricsLog(Path(run_dir) / METRICS)
    if metrics.path.exists():
        metrics.truncate_after(iteration)
    return params, iteration
