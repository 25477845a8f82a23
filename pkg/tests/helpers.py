"""Shared test utilities: random graph generation and brute-force plan checking."""

import numpy as np

from edgevad.graphopt import GraphBuilder, GraphError, MemoryPlan
from edgevad.tensor import Tensor


def random_graph(seed, min_ops=3, max_ops=8):
    """A random valid DAG over small 5-D tensors.

    Seeds conv->bias->relu triples (fusion targets), branch+add joins
    (two-consumer intermediates, fusion blockers), pools, and a gap3d/linear
    tail about half the time. Returns (graph, [input tensors]).
    """
    rng = np.random.default_rng(seed)
    b = GraphBuilder(name=f"rand{seed}")
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 4))
    d, h, w = (int(rng.integers(3, 6)) for _ in range(3))
    shape = (n, c, d, h, w)
    x = b.input(shape, name="x")
    cur, cur_shape = x, shape
    pcount = 0

    def fresh(name, arr):
        nonlocal pcount
        pcount += 1
        return b.param(f"{name}{pcount}", Tensor(arr.astype(np.float32)))

    n_ops = int(rng.integers(min_ops, max_ops + 1))
    for _ in range(n_ops):
        choice = rng.random()
        nb, cb, db, hb, wb = cur_shape
        if choice < 0.45:
            # conv triple (sometimes without the bias/relu tail)
            o = int(rng.integers(1, 5))
            kd = int(rng.integers(1, min(3, db) + 1))
            kh = int(rng.integers(1, min(3, hb) + 1))
            kw = int(rng.integers(1, min(3, wb) + 1))
            wgt = fresh("w", rng.normal(scale=0.5, size=(o, cb, kd, kh, kw)))
            try:
                cur = b.conv3d(cur, wgt, stride=(1, 1, 1), pad=(0, 0, 0))
            except GraphError:
                continue
            cur_shape = b._meta[cur].shape
            if rng.random() < 0.8:
                bias = fresh("b", rng.normal(scale=0.5, size=(o,)))
                cur = b.bias(cur, bias, axis=1)
                if rng.random() < 0.85:
                    cur = b.relu(cur)
        elif choice < 0.6:
            # branch join: two consumers of cur, blocks fusion across it
            y = b.relu(cur)
            cur = b.add(cur, y)
        elif choice < 0.75 and min(db, hb, wb) >= 2:
            cur = b.maxpool3d(cur, (1, 2, 2), (1, 2, 2))
            cur_shape = b._meta[cur].shape
        else:
            cur = b.relu(cur)
    if rng.random() < 0.5:
        cur = b.gap3d(cur)
        o = int(rng.integers(1, 5))
        wgt = fresh("fw", rng.normal(scale=0.5, size=(o, cur_shape[1])))
        cur = b.linear(cur, wgt)
        bias = fresh("fb", rng.normal(scale=0.5, size=(o,)))
        cur = b.bias(cur, bias, axis=-1)
        cur = b.relu(cur)
    b.output(cur)
    g = b.build()
    inputs = [Tensor(rng.normal(scale=1.0, size=shape).astype(np.float32))]
    return g, inputs


def check_plan_no_overlap(plan: MemoryPlan):
    """O(n^2) pairwise oracle: overlapping lifetimes never share byte ranges."""
    tids = list(plan.assignment)
    for i, a in enumerate(tids):
        ba, oa = plan.assignment[a]
        sa = plan.elems[a]
        la = plan.lifetime[a]
        for bid in range(i + 1, len(tids)):
            t = tids[bid]
            bb, ob = plan.assignment[t]
            if ba != bb:
                continue
            lb = plan.lifetime[t]
            lives_overlap = la[0] <= lb[1] and lb[0] <= la[1]
            ranges_overlap = oa < ob + plan.elems[t] and ob < oa + sa
            if lives_overlap and ranges_overlap:
                return False, (a, t)
    return True, None
