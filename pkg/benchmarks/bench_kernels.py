"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--grid case5 --grid case14]

Times one DC solve, one full ``settle`` (dispatch, flow, overload check) and
one ``GridEnv.simulate`` per backend on each grid's reference topology, and
checks that both backends give the same flows.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from sasgrid import kernels
from sasgrid.environment import GridEnv, flat_scenario
from sasgrid.grid import DO_NOTHING, load_preset
from sasgrid.powerflow import generator_nodes, line_nodes


def _best(fn, repeat: int) -> float:
    """Best-of-5 mean time per call, in microseconds."""
    best = float("inf")
    for _ in range(5):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best * 1e6


def _settle_args(env: GridEnv):
    s, st = env.spec, env.state
    topo = st.topo
    return (s.slot_substation, s.n_nodes, s.n_line, topo.bus_of.copy(),
            topo.line_connected.view(np.uint8).copy(), topo.line_cooldown.copy(), topo.overload_counter.copy(),
            env._inv_x, s.limit, env._p_min, env._p_max, env._renew_u8, np.zeros(s.n_gen),
            env._available(st.t), st.load_p.copy(), env._base, np.iinfo(np.int64).max, 12,
            np.empty(s.n_gen), np.empty(s.n_line), np.empty(s.n_line), np.zeros(s.n_line, dtype=np.uint8))


def bench_grid(name: str, repeat: int) -> list[tuple[str, str, float]]:
    spec = load_preset(name)
    env = GridEnv(spec, flat_scenario(spec, 10))
    env.reset()
    topo = env.state.topo
    frm, to = line_nodes(spec, topo)
    gen_node = generator_nodes(spec, topo)
    inj = np.zeros(spec.n_nodes)
    inj[0], inj[-2] = 1.0, -1.0
    backends = [("python", kernels.fallback)]
    if kernels.compiled is not None:
        backends.insert(0, ("cython", kernels.compiled))

    rows, flows = [], {}
    for label, mod in backends:
        rows.append((name, f"dc_solve/{label}",
                     _best(lambda: mod.dc_solve(spec.n_nodes, frm, to, env._inv_x, inj, gen_node), repeat)))
        args = _settle_args(env)
        mod.settle(*args)
        flows[label] = args[-3].copy()
        rows.append((name, f"settle/{label}", _best(lambda: mod.settle(*_settle_args(env)), repeat)))
    if len(flows) == 2:
        err = float(np.max(np.abs(flows["cython"] - flows["python"])))
        rows.append((name, "max |flow difference|", err))
    rows.append((name, f"simulate/{kernels.BACKEND}", _best(lambda: env.simulate(DO_NOTHING), repeat)))
    return rows


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--grid", action="append", default=None)
    args = ap.parse_args(argv)
    print(f"active backend: {kernels.BACKEND}")
    for grid in args.grid or ["case5", "case14"]:
        rows = bench_grid(grid, args.repeat)
        times = {k: v for _, k, v in rows}
        for g, what, value in rows:
            unit = "" if "difference" in what else " us"
            print(f"{g:8s} {what:24s} {value:10.3g}{unit}")
        for op in ("dc_solve", "settle"):
            if f"{op}/cython" in times:
                print(f"{grid:8s} {op + ' speed-up':24s} {times[f'{op}/python'] / times[f'{op}/cython']:9.1f}x")


if __name__ == "__main__":
    main()
