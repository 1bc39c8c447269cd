"""Command-line entry points.

    sasgrid gen-scenarios   write chronics and attack files
    sasgrid train           ES training (one run directory per K)
    sasgrid evaluate        greedy SAS rollouts of a checkpoint, with replay logs
    sasgrid ablate-k        train at several K and cross-evaluate every policy
    sasgrid replay          print or summarise a replay log
    sasgrid dump-catalogue  list the action catalogue of a grid

Settings resolve in the order: built-in defaults, ``--config`` file
(``key = value`` lines), environment (``SASGRID_OUTPUT_DIR``,
``SASGRID_WORKERS``), command-line flags.  Failures print one line
``error<TAB>kind<TAB>message`` on stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .actions import build_catalogue
from .environment import Scenario, load_scenarios, observation_dim
from .errors import ConfigError, SasGridError, VersionMismatch
from .es import (EvalReport, SasEvaluator, TrainConfig, evaluate, resume_state, train)
from .grid import GridSpec, resolve_grid
from .logs import read_replay
from .policy import PolicyParams, init_params, load_checkpoint
from .scenarios import ScenarioConfig, generate_scenarios, write_scenarios
from .workers import make_pool

log = logging.getLogger("sasgrid")

ENV_OUTPUT = "SASGRID_OUTPUT_DIR"
ENV_WORKERS = "SASGRID_WORKERS"

_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


@dataclass
class RunConfig:
    grid: str = "case5"
    scenarios: str = ""
    eval_scenarios: str = ""
    output: str = "runs"
    workers: int = 1
    seed: int = 0
    ks: tuple[int, ...] = (100,)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_text(self) -> str:
        lines = [f"grid = {self.grid}", f"scenarios = {self.scenarios}",
                 f"eval_scenarios = {self.eval_scenarios}", f"output = {self.output}",
                 f"workers = {self.workers}", f"seed = {self.seed}", f"k = {_fmt_list(self.ks)}"]
        for name, value in asdict(self.train).items():
            if name in ("k", "seed"):
                continue
            lines.append(f"{name} = {_fmt_list(value) if isinstance(value, tuple) else _fmt(value)}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return ("true" if v else "false") if isinstance(v, bool) else str(v)


def _fmt_list(v) -> str:
    return ",".join(str(x) for x in v)


def _int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _coerce(name: str, text: str, default):
    try:
        if isinstance(default, bool):
            return _BOOL[text.strip().lower()]
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return _int_list(text)
    except (KeyError, ValueError):
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text.strip()


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def build_run_config(file_values: dict[str, str], overrides: dict[str, str], env=None) -> RunConfig:
    """Merge config-file values, environment and flag overrides (strings)."""
    env = os.environ if env is None else env
    merged = dict(file_values)
    if env.get(ENV_OUTPUT):
        merged["output"] = env[ENV_OUTPUT]
    if env.get(ENV_WORKERS):
        merged["workers"] = env[ENV_WORKERS]
    merged.update({k: v for k, v in overrides.items() if v is not None})

    run = RunConfig()
    tdef = TrainConfig()
    tvals = {}
    known_run = {f.name for f in fields(RunConfig)} - {"train", "ks"}
    known_train = set(TrainConfig.field_names()) - {"k", "seed"}
    for key, value in merged.items():
        if key == "k":
            run.ks = _int_list(value)
        elif key in known_run:
            setattr(run, key, _coerce(key, value, getattr(run, key)))
        elif key in known_train:
            tvals[key] = _coerce(key, value, getattr(tdef, key))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if not run.ks:
        raise ConfigError("need at least one K")
    if run.workers < 1:
        raise ConfigError("workers must be positive")
    run.train = TrainConfig(**{**asdict(tdef), **tvals, "k": run.ks[0], "seed": run.seed})
    return run


# -- helpers ---------------------------------------------------------------------------


def _load_scenario_dir(path: str, spec: GridSpec) -> list[Scenario]:
    if not path:
        raise ConfigError("no scenario directory given")
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"scenario directory not found: {p}")
    scs = load_scenarios(p)
    if not scs:
        raise ConfigError(f"no scenarios in {p}")
    for sc in scs:
        sc.check(spec)
    return scs


def _load_policy(path: str, spec: GridSpec, n_actions: int) -> PolicyParams:
    params, _ = load_checkpoint(path)
    want = (observation_dim(spec), n_actions)
    have = (params.sizes[0], params.sizes[-1])
    if have != want:
        raise VersionMismatch(f"checkpoint maps {have[0]} inputs to {have[1]} actions; "
                              f"grid {spec.name} needs {want[0]} -> {want[1]}")
    return params


def _report_line(name: str, rep: EvalReport) -> str:
    return (f"{name}\tK={rep.k}\tmean_return={rep.mean_return:.4f}\tmean_steps={rep.mean_steps:.2f}"
            f"\tfallback_rate={rep.fallback_rate:.4f}\tscenarios={len(rep.returns)}")


def _write_report(path: Path, rows: list[tuple[str, EvalReport]]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        fh.write("policy\tk\tmean_return\tmean_steps\tfallback_rate\tscenarios\n")
        for name, rep in rows:
            fh.write(f"{name}\t{rep.k}\t{rep.mean_return!r}\t{rep.mean_steps!r}\t{rep.fallback_rate!r}"
                     f"\t{len(rep.returns)}\n")


# -- commands ------------------------------------------------------------------------------


def cmd_gen_scenarios(args) -> int:
    spec = resolve_grid(args.grid)
    lo, hi = _int_list(args.attack_duration)
    cfg = ScenarioConfig(length=args.length, attack_rate=args.attack_rate, attack_duration=(lo, hi))
    scs = generate_scenarios(spec, args.count, cfg, args.seed)
    paths = write_scenarios(scs, args.out)
    print(f"wrote {len(scs)} scenarios ({len(paths)} files) to {args.out}")
    return 0


def _train_one(run: RunConfig, k: int, spec: GridSpec, catalogue, train_scs, eval_scs, run_dir: Path,
               resume: bool) -> tuple[PolicyParams, EvalReport]:
    cfg = run.train.replace(k=k)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "run.cfg").write_text(RunConfig(**{**run.__dict__, "ks": (k,), "train": cfg}).to_text(),
                                     encoding="utf-8")
    params = init_params(observation_dim(spec), len(catalogue), cfg.hidden, seed=run.seed)
    start = 0
    if resume:
        state = resume_state(run_dir, params)
        if state is not None:
            params, start = state
            log.info("resuming %s at iteration %d", run_dir, start)
    evaluator = SasEvaluator(spec, catalogue, train_scs, gamma=cfg.gamma)
    with make_pool(evaluator, run.workers, cfg.quorum) as pool:
        res = train(params, cfg, pool, len(train_scs), run_dir=run_dir, start_iteration=start,
                    on_iteration=lambda s: log.info("K=%d iteration %d mean return %.3f", k, s.iteration,
                                                    s.mean_return))
    max_steps = cfg.max_steps or None
    rep = evaluate(res.params, k, spec, catalogue, eval_scs, max_steps=max_steps, gamma=cfg.gamma)
    _write_report(run_dir / "summary.tsv", [("trained", rep)])
    return res.params, rep


def _setup(args) -> tuple[RunConfig, GridSpec]:
    file_values = parse_config_text(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    overrides = {name: getattr(args, name, None) for name in _OVERRIDES}
    overrides = {k: (None if v is None else str(v)) for k, v in overrides.items()}
    run = build_run_config(file_values, overrides)
    return run, resolve_grid(run.grid)


def cmd_train(args) -> int:
    run, spec = _setup(args)
    catalogue = build_catalogue(spec)
    train_scs = _load_scenario_dir(run.scenarios, spec)
    eval_scs = _load_scenario_dir(run.eval_scenarios, spec) if run.eval_scenarios else train_scs
    out = Path(run.output)
    for k in run.ks:
        run_dir = out / f"k{k}" if len(run.ks) > 1 else out
        _, rep = _train_one(run, k, spec, catalogue, train_scs, eval_scs, run_dir, args.resume)
        print(_report_line(str(run_dir), rep))
    return 0


def cmd_evaluate(args) -> int:
    spec = resolve_grid(args.grid)
    catalogue = build_catalogue(spec)
    scs = _load_scenario_dir(args.scenarios, spec)
    ks = _int_list(args.k)
    if not ks:
        raise ConfigError("need at least one K")
    if args.do_nothing:
        params, name = None, "do-nothing"
    else:
        if not args.checkpoint:
            raise ConfigError("evaluate needs --checkpoint or --do-nothing")
        params, name = _load_policy(args.checkpoint, spec, len(catalogue)), args.checkpoint
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in (ks[:1] if params is None else ks):
        rep = evaluate(params, k, spec, catalogue, scs, max_steps=args.max_steps or None,
                       replay_dir=None if out is None else out / "replays")
        rows.append((name, rep))
        print(_report_line(name, rep))
    if out is not None:
        _write_report(out / "report.tsv", rows)
    return 0


def cmd_ablate_k(args) -> int:
    run, spec = _setup(args)
    catalogue = build_catalogue(spec)
    train_scs = _load_scenario_dir(run.scenarios, spec)
    eval_scs = _load_scenario_dir(run.eval_scenarios, spec) if run.eval_scenarios else train_scs
    eval_ks = _int_list(args.eval_k) if args.eval_k else run.ks
    out = Path(run.output)
    trained = {}
    for k in run.ks:
        trained[k], _ = _train_one(run, k, spec, catalogue, train_scs, eval_scs, out / f"k{k}", args.resume)
    max_steps = run.train.max_steps or None
    with (out / "ablation.tsv").open("w", encoding="utf-8") as fh:
        fh.write("train_k\teval_k\tmean_return\tmean_steps\tfallback_rate\n")
        for k, params in trained.items():
            for ek in eval_ks:
                rep = evaluate(params, ek, spec, catalogue, eval_scs, max_steps=max_steps, gamma=run.train.gamma)
                fh.write(f"{k}\t{ek}\t{rep.mean_return!r}\t{rep.mean_steps!r}\t{rep.fallback_rate!r}\n")
                print(f"train_K={k}\teval_K={ek}\tmean_return={rep.mean_return:.4f}"
                      f"\tmean_steps={rep.mean_steps:.2f}")
    return 0


def cmd_replay(args) -> int:
    records = read_replay(args.log)
    if args.summary:
        acted = sum(r.action != 0 for r in records)
        fb = sum(r.fallback for r in records)
        risk = np.mean([r.risk for r in records]) if records else float("nan")
        print(f"steps={len(records)}\tactions={acted}\tfallbacks={fb}\tmean_risk={risk:.4f}"
              f"\tterminated={bool(records and records[-1].done)}")
        return 0
    spec = resolve_grid(args.grid) if args.grid else None
    catalogue = build_catalogue(spec) if spec is not None else None
    for r in records:
        what = catalogue.action_at(r.action).describe() if catalogue is not None else f"action {r.action}"
        flags = ("\tfallback" if r.fallback else "") + ("\tdone" if r.done else "")
        print(f"{r.step}\t{what}\treward={r.reward:g}\trisk={r.risk:.4f}\tK={r.k}\tsurvivors={r.survivors}"
              f"\tpredicted={r.predicted_risk:.4f}{flags}")
    return 0


def cmd_dump_catalogue(args) -> int:
    spec = resolve_grid(args.grid)
    cat = build_catalogue(spec, include_redispatch=args.redispatch)
    print(cat.table())
    print(f"# {len(cat)} actions: " + ", ".join(f"{k}={v}" for k, v in cat.kinds().items()))
    return 0


# -- parser ------------------------------------------------------------------------------

_OVERRIDES = ("grid", "scenarios", "eval_scenarios", "output", "workers", "seed", "k", "population", "sigma", "lr",
              "iterations", "episodes_per_perturbation", "hidden", "max_steps", "quorum", "checkpoint_every",
              "gamma", "antithetic", "rank_shaping")


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--grid", help="preset name or grid file")
    p.add_argument("--scenarios", help="training scenario directory")
    p.add_argument("--eval-scenarios", dest="eval_scenarios", help="held-out scenario directory")
    p.add_argument("--output", help="output directory (env %s)" % ENV_OUTPUT)
    p.add_argument("--workers", type=int, help="rollout processes (env %s)" % ENV_WORKERS)
    p.add_argument("--seed", type=int)
    p.add_argument("--k", help="action set size, or a comma list for a sweep")
    p.add_argument("--population", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--episodes-per-perturbation", dest="episodes_per_perturbation", type=int)
    p.add_argument("--hidden", help="hidden widths, comma separated")
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--quorum", type=float)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--antithetic", choices=("true", "false"))
    p.add_argument("--rank-shaping", dest="rank_shaping", choices=("true", "false"))
    p.add_argument("--resume", action="store_true", help="continue from the run directory's latest checkpoint")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sasgrid", description="Search with an action set for grid topology control")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenarios", help="write chronics and attack files")
    p.add_argument("--grid", default="case5")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--length", type=int, default=288, help="steps (288 = one day)")
    p.add_argument("--attack-rate", dest="attack_rate", type=float, default=ScenarioConfig.attack_rate,
                   help="expected attacks per simulated day")
    p.add_argument("--attack-duration", dest="attack_duration",
                   default=_fmt_list(ScenarioConfig.attack_duration), help="min,max outage steps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_scenarios)

    p = sub.add_parser("train", help="train with ES")
    _add_run_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="greedy rollouts of a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--do-nothing", dest="do_nothing", action="store_true", help="ignore the agent")
    p.add_argument("--grid", default="case5")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--k", default="100", help="K, or a comma list for a paired report")
    p.add_argument("--max-steps", dest="max_steps", type=int, default=0)
    p.add_argument("--out", help="directory for report.tsv and replay logs")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate-k", help="train at each K, evaluate at each K")
    _add_run_options(p)
    p.add_argument("--eval-k", dest="eval_k", help="evaluation K list (default: the training list)")
    p.set_defaults(func=cmd_ablate_k)

    p = sub.add_parser("replay", help="print a replay log")
    p.add_argument("log")
    p.add_argument("--grid", help="describe actions using this grid's catalogue")
    p.add_argument("--summary", action="store_true")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("dump-catalogue", help="list the action catalogue")
    p.add_argument("--grid", default="case5")
    p.add_argument("--redispatch", action="store_true", help="include redispatch actions")
    p.set_defaults(func=cmd_dump_catalogue)
    return ap


def error_line(exc: BaseException) -> str:
    if isinstance(exc, SasGridError):
        kind = exc.kind
    elif isinstance(exc, OSError):
        kind = "IoError"
    else:
        kind = type(exc).__name__
    msg = " ".join(str(exc).split())
    return f"error\t{kind}\t{msg}"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (SasGridError, OSError, ValueError) as exc:
        print(error_line(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
