"""DC power flow over the (substation, bus) node graph, and the overload risk.

Physics contract: lossless linearised flow, ``B theta = P`` solved per
island with one slack node (theta = 0) that absorbs the island's injection
imbalance; line flow is ``(theta_from - theta_to) / x``.  Systems up to
``DENSE_MAX_NODES`` nodes are factorised densely by the selected kernel;
larger ones go through a scipy sparse LU solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NotConverged, SingularSystem
from .grid import GridSpec, TopologyState, slot_nodes

DENSE_MAX_NODES = kernels.DENSE_MAX_NODES


@dataclass
class PowerFlowResult:
    flow: np.ndarray  # signed per-unit flow, origin -> extremity
    rho: np.ndarray  # |flow| / limit, 0 on disconnected lines
    converged: bool = True
    theta: np.ndarray | None = None
    injection: np.ndarray | None = None  # per node, after slack absorption
    node_label: np.ndarray | None = None
    connected: np.ndarray | None = None


def line_nodes(spec: GridSpec, topo: TopologyState) -> tuple[np.ndarray, np.ndarray]:
    nodes = slot_nodes(spec, topo.bus_of)
    nl = spec.n_line
    return (nodes[0: 2 * nl: 2].astype(np.int32), nodes[1: 2 * nl: 2].astype(np.int32))


def generator_nodes(spec: GridSpec, topo: TopologyState) -> np.ndarray:
    flags = np.zeros(spec.n_nodes, dtype=np.uint8)
    if spec.n_gen:
        first = 2 * spec.n_line
        buses = topo.bus_of[first: first + spec.n_gen].astype(np.int64)
        on = buses > 0
        flags[2 * spec.gen_substation[on] + buses[on] - 1] = 1
    return flags


def dc_flows(spec: GridSpec, frm: np.ndarray, to: np.ndarray, inj: np.ndarray,
             gen_node: np.ndarray):
    """Low-level entry: node endpoints per line (-1 when out) and node injections."""
    inv_x = 1.0 / spec.reactance
    inj = np.ascontiguousarray(inj, dtype=np.float64)
    try:
        return kernels.dc_solve(spec.n_nodes, frm, to, inv_x, inj, gen_node)
    except kernels.KernelSingular as exc:
        raise SingularSystem(str(exc)) from exc


def solve_dc(spec: GridSpec, topo: TopologyState, inj) -> PowerFlowResult:
    """Solve the DC power flow for ``topo`` with node injections ``inj`` (per-unit).

    ``inj`` has one entry per node ``2 * substation + bus - 1``.
    """
    inj = np.asarray(inj, dtype=np.float64)
    if inj.shape != (spec.n_nodes,):
        raise ValueError(f"expected {spec.n_nodes} node injections, got shape {inj.shape}")
    frm, to = line_nodes(spec, topo)
    theta, flow, bal, lab = dc_flows(spec, frm, to, inj, generator_nodes(spec, topo))
    connected = (frm >= 0) & (to >= 0)
    rho = np.where(connected, np.abs(flow) / spec.limit, 0.0)
    return PowerFlowResult(flow, rho, True, theta, bal, lab, connected)


def compute_risk(pf: PowerFlowResult) -> float:
    """Largest loading ratio over connected lines; 0 when none is connected."""
    if not pf.converged:
        raise NotConverged("power flow did not converge")
    rho = np.asarray(pf.rho)
    if pf.connected is not None:
        rho = rho[pf.connected]
    return float(rho.max()) if rho.size else 0.0
