"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``.

``sparse_dc_solve`` has no compiled twin; it serves systems too large for the
dense factorisation.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

TOL = 1e-9

SETTLED = 0
ISLANDING = 1
UNSERVED = 2
SINGULAR = 3


class KernelSingular(Exception):
    pass


def label_nodes(n_nodes, frm, to):
    parent = list(range(n_nodes))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in zip(frm, to):
        if a < 0 or b < 0:
            continue
        ra, rb = find(int(a)), find(int(b))
        if ra < rb:
            parent[rb] = ra
        elif rb < ra:
            parent[ra] = rb
    return np.array([find(i) for i in range(n_nodes)], dtype=np.intp)


def _slacks(n_nodes, lab, gen_node):
    slack = {}
    for i in np.flatnonzero(gen_node):
        slack.setdefault(lab[i], i)
    for i in range(n_nodes):
        slack.setdefault(lab[i], lab[i])
    is_slack = np.array([slack[lab[i]] == i for i in range(n_nodes)], dtype=bool)
    return slack, is_slack


def _balanced(inj, lab, slack, is_slack):
    bal = inj.copy()
    bal[is_slack] = 0.0
    for i in np.flatnonzero(~is_slack):
        bal[slack[lab[i]]] -= inj[i]
    return bal


def dc_solve(n_nodes, frm, to, inv_x, inj, gen_node):
    frm = np.asarray(frm)
    to = np.asarray(to)
    inj = np.asarray(inj, dtype=np.float64)
    lab = label_nodes(n_nodes, frm, to)
    slack, is_slack = _slacks(n_nodes, lab, gen_node)

    on = (frm >= 0) & (to >= 0)
    a, b, y = frm[on], to[on], np.asarray(inv_x)[on]
    m = np.zeros((n_nodes, n_nodes))
    np.add.at(m, (a, a), y)
    np.add.at(m, (b, b), y)
    np.add.at(m, (a, b), -y)
    np.add.at(m, (b, a), -y)

    rhs = np.where(is_slack, 0.0, inj)
    m[is_slack, :] = 0.0
    m[is_slack, is_slack] = 1.0
    try:
        theta = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:
        raise KernelSingular(str(exc)) from exc
    if not np.all(np.isfinite(theta)):
        raise KernelSingular("non-finite angles")
    flow = np.zeros(len(frm))
    flow[on] = (theta[a] - theta[b]) * y
    return theta, flow, _balanced(inj, lab, slack, is_slack), lab


def sparse_dc_solve(n_nodes, frm, to, inv_x, inj, gen_node):
    frm = np.asarray(frm)
    to = np.asarray(to)
    inj = np.asarray(inj, dtype=np.float64)
    lab = label_nodes(n_nodes, frm, to)
    slack, is_slack = _slacks(n_nodes, lab, gen_node)
    on = (frm >= 0) & (to >= 0)
    a, b, y = frm[on], to[on], np.asarray(inv_x)[on]
    keep_a, keep_b = ~is_slack[a], ~is_slack[b]
    both = keep_a & keep_b
    fixed = np.flatnonzero(is_slack)
    rows = np.concatenate([a[keep_a], b[keep_b], a[both], b[both], fixed])
    cols = np.concatenate([a[keep_a], b[keep_b], b[both], a[both], fixed])
    vals = np.concatenate([y[keep_a], y[keep_b], -y[both], -y[both], np.ones(len(fixed))])
    mat = sp.csc_matrix((vals, (rows, cols)), shape=(n_nodes, n_nodes))
    rhs = np.where(is_slack, 0.0, inj)
    with np.errstate(all="raise"):
        try:
            theta = spla.spsolve(mat, rhs)
        except (RuntimeError, FloatingPointError) as exc:
            raise KernelSingular(str(exc)) from exc
    if not np.all(np.isfinite(theta)):
        raise KernelSingular("singular susceptance matrix")
    flow = np.zeros(len(frm))
    flow[on] = (theta[a] - theta[b]) * y
    return theta, flow, _balanced(inj, lab, slack, is_slack), lab


def waterfill(target, offset, weight, lo, hi):
    """Outputs ``clip(offset + weight * lam)`` summing to ``target``, or None."""
    n = len(offset)
    p = np.empty(n)
    free = np.ones(n, dtype=bool)
    for _ in range(n + 1):
        rem = target - p[~free].sum()
        wsum = weight[free].sum()
        if wsum <= 0:
            break
        lam = (rem - offset[free].sum()) / wsum
        p[free] = offset[free] + weight[free] * lam
        over = free & (p > hi + TOL)
        under = free & (p < lo - TOL)
        if not (over.any() or under.any()):
            break
        p[over] = hi[over]
        p[under] = lo[under]
        free &= ~(over | under)
        if not free.any():
            break
    if abs(p.sum() - target) > 1e-6 * max(1.0, abs(target)):
        return None
    return p


def _dispatch(lab, gen_nodes, load_nodes, p_min, p_max, renew, delta, avail, load_p):
    gen_isl = lab[gen_nodes]
    load_isl = lab[load_nodes]
    disp_all = ~renew
    gen_p = np.zeros(len(p_min))
    for isl in sorted(set(gen_isl.tolist()) | set(load_isl.tolist())):
        gm = gen_isl == isl
        demand = load_p[load_isl == isl].sum()
        ren = gm & renew
        disp = gm & disp_all
        ren_avail = avail[ren].sum()
        net = demand - ren_avail
        lo = p_min[disp].sum()
        hi = p_max[disp].sum()
        if net > hi + TOL:
            return None
        if net < lo:
            cut = lo - net
            if cut > ren_avail + TOL:
                return None
            gen_p[ren] = avail[ren] * ((ren_avail - cut) / ren_avail if ren_avail > 0 else 0.0)
            net = lo
        else:
            gen_p[ren] = avail[ren]
        if disp.any():
            p = waterfill(net, delta[disp], p_max[disp], p_min[disp], p_max[disp])
            if p is None:
                return None
            gen_p[disp] = p
    return gen_p


def settle(slot_sub, n_nodes, n_line, bus_of, connected, line_cd, counter,
           inv_x, limit, p_min, p_max, renew, delta, avail, load_p, base_mva,
           overload_steps, recovery_steps, gen_p, flow, rho, tripped, allow_islands=False, sparse=False):
    """Same contract as the compiled ``settle``; arrays are updated in place."""
    renew = np.asarray(renew, dtype=bool)
    connected = connected.view(bool) if connected.dtype != bool else connected
    solve = sparse_dc_solve if sparse else dc_solve
    e0 = 2 * n_line
    n_gen = len(p_min)
    pre = np.array(counter, dtype=np.int64)
    tripped[:] = 0
    while True:
        bus = bus_of.astype(np.int64)
        nodes = 2 * slot_sub + bus - 1
        nodes[bus == 0] = -1
        frm = np.ascontiguousarray(nodes[0:e0:2], dtype=np.intc)
        to = np.ascontiguousarray(nodes[1:e0:2], dtype=np.intc)
        elem = nodes[e0:]
        has_line = np.zeros(n_nodes, dtype=bool)
        has_line[frm[frm >= 0]] = True
        has_line[to[to >= 0]] = True
        if np.any(elem < 0) or not has_line[elem].all():
            return ISLANDING
        lab = label_nodes(n_nodes, frm, to)
        if not allow_islands and len(elem) and np.any(lab[elem] != lab[elem[0]]):
            return ISLANDING
        gen_nodes, load_nodes = elem[:n_gen], elem[n_gen:]
        p = _dispatch(lab, gen_nodes, load_nodes, p_min, p_max, renew, delta, avail, load_p)
        if p is None:
            return UNSERVED
        gen_p[:] = p
        inj = (np.bincount(gen_nodes, weights=p, minlength=n_nodes)
               - np.bincount(load_nodes, weights=load_p, minlength=n_nodes)) / base_mva
        flag = np.zeros(n_nodes, dtype=np.uint8)
        flag[gen_nodes] = 1
        try:
            _, f, _, _ = solve(n_nodes, frm, to, inv_x, inj, flag)
        except KernelSingular:
            return SINGULAR
        flow[:] = f
        rho[:] = np.where(connected, np.abs(f) / limit, 0.0)
        counter[:] = np.where(rho > 1.0, pre + 1, 0)
        trip = counter >= overload_steps
        if not trip.any():
            return SETTLED
        for ln in np.flatnonzero(trip):
            bus_of[2 * ln] = bus_of[2 * ln + 1] = 0
            connected[ln] = False
            line_cd[ln] = recovery_steps
            pre[ln] = 0
            counter[ln] = 0
            tripped[ln] = 1
