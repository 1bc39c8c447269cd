from __future__ import annotations

import numpy as np
import pytest

from sasgrid import kernels
from sasgrid.environment import GridEnv, flat_scenario

from .conftest import random_topology

needs_compiled = pytest.mark.skipif(kernels.compiled is None, reason="compiled kernels not built")


def _args(env, topo, load_p, overload_steps=3):
    s = env.spec
    return [s.slot_substation, s.n_nodes, s.n_line, topo.bus_of.copy(),
            topo.line_connected.view(np.uint8).copy(), topo.line_cooldown.copy(), topo.overload_counter.copy(),
            env._inv_x, s.limit, env._p_min, env._p_max, env._renew_u8, np.zeros(s.n_gen),
            env._available(0), load_p, env._base, overload_steps, 12,
            np.zeros(s.n_gen), np.zeros(s.n_line), np.zeros(s.n_line), np.zeros(s.n_line, dtype=np.uint8)]


@needs_compiled
@pytest.mark.parametrize("name", ["case5", "case14"])
@pytest.mark.parametrize("allow", [False, True])
def test_settle_backends_agree(name, allow, request, rng):
    spec = request.getfixturevalue(name)
    env = GridEnv(spec, flat_scenario(spec, 3))
    env.reset()
    codes = set()
    for _ in range(150):
        topo = random_topology(spec, rng, p_split=0.3, p_off=0.15)
        topo.overload_counter[:] = rng.integers(0, 3, spec.n_line) * topo.line_connected
        load = np.array([ld.nominal_mw for ld in spec.loads]) * rng.uniform(0.6, 1.6)
        a, b = _args(env, topo, load), _args(env, topo, load)
        ca = kernels.compiled.settle(*a, allow_islands=allow)
        cb = kernels.fallback.settle(*b, allow_islands=allow)
        assert ca == cb
        codes.add(ca)
        for i in (3, 4, 5, 6, 21):  # topology arrays changed in place, tripped flags
            assert np.array_equal(a[i], b[i])
        if ca == kernels.SETTLED:
            for i in (18, 19, 20):
                assert np.allclose(a[i], b[i], atol=1e-9, rtol=0)
    assert kernels.SETTLED in codes and len(codes) > 1


def test_fallback_sparse_settle_agrees(case14, rng):
    env = GridEnv(case14, flat_scenario(case14, 3))
    env.reset()
    for _ in range(30):
        topo = random_topology(case14, rng)
        load = np.array([ld.nominal_mw for ld in case14.loads])
        a, b = _args(env, topo, load), _args(env, topo, load)
        assert kernels.fallback.settle(*a) == kernels.fallback.settle(*b, sparse=True)
        assert np.allclose(a[19], b[19], atol=1e-9, rtol=0)


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")


def test_env_var_forces_fallback():
    import os
    import subprocess
    import sys

    code = "from sasgrid import kernels; print(kernels.BACKEND)"
    env = {**os.environ, "SASGRID_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
