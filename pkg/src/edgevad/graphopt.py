"""Compute-graph IR, optimization passes, and the executor.

A ComputeGraph is a static single-producer DAG of kernel nodes over tensor ids.
Three passes mirror a deployment-engine builder: operator fusion
(conv/linear -> bias -> relu chains collapse to one node), precision lowering
to emulated binary16, and static memory planning (lifetime analysis plus greedy
best-fit offset assignment into one arena). Passes are pure graph -> graph
functions and never change execution results beyond the documented F16 rounding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .tensor import (
    F16,
    F32,
    ShapeError,
    Tensor,
    conv1d_raw,
    conv3d_raw,
    conv3d_workspace_elems,
    linear_raw,
    maxpool3d_raw,
    nonlocal_raw,
    round_f16,
    softmax_raw,
)


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class TensorMeta:
    shape: Tuple[int, ...]
    precision: str = F32

    @property
    def elems(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    @property
    def bytes_per_elem(self) -> int:
        return 2 if self.precision == F16 else 4

    @property
    def nbytes(self) -> int:
        return self.elems * self.bytes_per_elem


@dataclass(frozen=True)
class Node:
    name: str
    kind: str
    inputs: Tuple[str, ...]
    output: str
    attrs: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)  # slot -> parameter name


@dataclass
class ComputeGraph:
    nodes: List[Node]
    inputs: List[str]
    outputs: List[str]
    meta: Dict[str, TensorMeta]
    params: Dict[str, Tensor]
    name: str = "graph"

    def consumers(self) -> Dict[str, List[int]]:
        cons: Dict[str, List[int]] = {t: [] for t in self.meta}
        for i, n in enumerate(self.nodes):
            for t in n.inputs:
                cons[t].append(i)
        return cons

    def validate(self) -> None:
        produced = set(self.inputs)
        for t in self.inputs:
            if t not in self.meta:
                raise GraphError(f"input {t} has no meta")
        for i, n in enumerate(self.nodes):
            for t in n.inputs:
                if t not in produced:
                    raise GraphError(f"node {n.name}: input {t} not yet produced (cycle or bad order)")
            if n.output in produced:
                raise GraphError(f"tensor {n.output} has more than one producer")
            for slot, pname in n.params.items():
                if pname not in self.params:
                    raise GraphError(f"node {n.name}: missing parameter {pname} for slot {slot}")
            want = infer_shape(
                n.kind,
                [self.meta[t].shape for t in n.inputs],
                n.attrs,
                {slot: self.params[p].shape for slot, p in n.params.items()},
            )
            got = self.meta[n.output].shape
            if tuple(want) != tuple(got):
                raise GraphError(f"node {n.name}: declared output shape {got} != inferred {tuple(want)}")
            produced.add(n.output)
        for t in self.outputs:
            if t not in produced:
                raise GraphError(f"graph output {t} is never produced")

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def fingerprint(self) -> str:
        """Structure hash covering kinds, shapes, attrs (not parameter values)."""
        import hashlib

        doc = self.to_json(include_name=False)
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def to_json(self, include_name: bool = True) -> dict:
        doc = {
            "inputs": [
                {"id": t, "shape": list(self.meta[t].shape), "precision": self.meta[t].precision}
                for t in self.inputs
            ],
            "outputs": list(self.outputs),
            "nodes": [
                {
                    "name": n.name,
                    "kind": n.kind,
                    "inputs": list(n.inputs),
                    "output": n.output,
                    "attrs": _jsonable_attrs(n.attrs),
                    "params": dict(n.params),
                }
                for n in self.nodes
            ],
            "meta": {
                t: {"shape": list(m.shape), "precision": m.precision} for t, m in self.meta.items()
            },
            "param_manifest": {k: list(v.shape) for k, v in self.params.items()},
        }
        if include_name:
            doc["name"] = self.name
        return doc

    @classmethod
    def from_json(cls, doc: dict, params: Dict[str, Tensor]) -> "ComputeGraph":
        meta = {t: TensorMeta(tuple(m["shape"]), m["precision"]) for t, m in doc["meta"].items()}
        nodes = [
            Node(
                name=n["name"],
                kind=n["kind"],
                inputs=tuple(n["inputs"]),
                output=n["output"],
                attrs={k: (tuple(v) if isinstance(v, list) else v) for k, v in n["attrs"].items()},
                params=dict(n["params"]),
            )
            for n in doc["nodes"]
        ]
        g = cls(
            nodes=nodes,
            inputs=[i["id"] for i in doc["inputs"]],
            outputs=list(doc["outputs"]),
            meta=meta,
            params=params,
            name=doc.get("name", "graph"),
        )
        g.validate()
        return g


def _jsonable_attrs(attrs: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in attrs.items()}


# ---------------------------------------------------------------------------
# shape inference
# ---------------------------------------------------------------------------

def _conv3d_shape(x, w, attrs):
    n, c, d, h, wid = x
    o, cw, kd, kh, kw = w
    if c != cw:
        raise GraphError(f"channel axis mismatch: input C={c} vs weight C={cw}")
    sd, sh, sw = attrs["stride"]
    pd, ph, pw = attrs["pad"]
    dd, dh, dw = attrs.get("dilation", (1, 1, 1))
    od = (d + 2 * pd - ((kd - 1) * dd + 1)) // sd + 1
    oh = (h + 2 * ph - ((kh - 1) * dh + 1)) // sh + 1
    ow = (wid + 2 * pw - ((kw - 1) * dw + 1)) // sw + 1
    if min(od, oh, ow) < 1:
        raise GraphError(f"conv3d output collapses: {(od, oh, ow)}")
    return (n, o, od, oh, ow)


def infer_shape(kind: str, input_shapes: Sequence[tuple], attrs: dict, param_shapes: dict) -> tuple:
    x = tuple(input_shapes[0]) if input_shapes else ()
    if kind in ("conv3d", "conv3d_bias_relu"):
        return _conv3d_shape(x, param_shapes["w"], attrs)
    if kind in ("conv1d", "conv1d_bias_relu"):
        c, t = x
        o, cw, k = param_shapes["w"]
        if c != cw:
            raise GraphError(f"channel axis mismatch: input C={c} vs weight C={cw}")
        if k % 2 == 0:
            raise GraphError(f"even conv1d kernel k={k} unsupported (same-padding)")
        return (o, t)
    if kind in ("linear", "linear_bias_relu"):
        o, i = param_shapes["w"]
        if x[-1] != i:
            raise GraphError(f"trailing axis mismatch: input I={x[-1]} vs weight I={i}")
        return x[:-1] + (o,)
    if kind == "bias_add":
        b = param_shapes["b"]
        axis = attrs["axis"]
        if x[axis] != b[0]:
            raise GraphError(f"bias extent {b[0]} != input axis {axis} extent {x[axis]}")
        return x
    if kind in ("relu", "sigmoid", "softmax"):
        return x
    if kind == "add":
        a, b = tuple(input_shapes[0]), tuple(input_shapes[1])
        if a != b:
            raise GraphError(f"add shape mismatch {a} vs {b}")
        return a
    if kind == "maxpool3d":
        n, c, d, h, w = x
        kd, kh, kw = attrs["kernel"]
        sd, sh, sw = attrs["stride"]
        od, oh, ow = (d - kd) // sd + 1, (h - kh) // sh + 1, (w - kw) // sw + 1
        if min(od, oh, ow) < 1:
            raise GraphError(f"maxpool3d output collapses: {(od, oh, ow)}")
        return (n, c, od, oh, ow)
    if kind == "gap3d":
        return (x[0], x[1])
    if kind in ("nonlocal3d", "nonlocal1d"):
        return x
    if kind == "transpose2d":
        return (x[1], x[0])
    if kind == "concat":
        axis = attrs["axis"]
        base = list(input_shapes[0])
        total = 0
        for s in input_shapes:
            s = list(s)
            if s[:axis] + s[axis + 1:] != base[:axis] + base[axis + 1:]:
                raise GraphError(f"concat shape mismatch on non-concat axes: {input_shapes}")
            total += s[axis]
        base[axis] = total
        return tuple(base)
    raise GraphError(f"unknown node kind {kind!r}")


# ---------------------------------------------------------------------------
# builder
# ---------------------------------------------------------------------------

class GraphBuilder:
    """Constructs valid graphs node by node with shape inference."""

    def __init__(self, name: str = "graph"):
        self._name = name
        self._nodes: List[Node] = []
        self._inputs: List[str] = []
        self._outputs: List[str] = []
        self._meta: Dict[str, TensorMeta] = {}
        self._params: Dict[str, Tensor] = {}
        self._counter = 0

    def _tid(self, prefix: str) -> str:
        self._counter += 1
        return f"{prefix}_{self._counter}"

    def input(self, shape, precision: str = F32, name: Optional[str] = None) -> str:
        t = name or self._tid("in")
        self._inputs.append(t)
        self._meta[t] = TensorMeta(tuple(shape), precision)
        return t

    def param(self, name: str, value) -> str:
        if name in self._params:
            raise GraphError(f"duplicate parameter name {name}")
        self._params[name] = value if isinstance(value, Tensor) else Tensor(np.asarray(value))
        return name

    def op(
        self,
        kind: str,
        inputs: Sequence[str],
        attrs: Optional[dict] = None,
        params: Optional[dict] = None,
        name: Optional[str] = None,
    ) -> str:
        attrs = attrs or {}
        params = params or {}
        out = self._tid(kind)
        shape = infer_shape(
            kind,
            [self._meta[t].shape for t in inputs],
            attrs,
            {slot: self._params[p].shape for slot, p in params.items()},
        )
        prec = self._meta[inputs[0]].precision if inputs else F32
        self._meta[out] = TensorMeta(tuple(shape), prec)
        self._nodes.append(
            Node(name=name or out, kind=kind, inputs=tuple(inputs), output=out, attrs=attrs, params=params)
        )
        return out

    # convenience wrappers -------------------------------------------------
    def conv3d(self, x, w_name, stride=(1, 1, 1), pad=(0, 0, 0), dilation=(1, 1, 1), name=None):
        return self.op("conv3d", [x], {"stride": tuple(stride), "pad": tuple(pad), "dilation": tuple(dilation)}, {"w": w_name}, name)

    def conv1d(self, x, w_name, dilation=1, name=None):
        return self.op("conv1d", [x], {"dilation": int(dilation)}, {"w": w_name}, name)

    def linear(self, x, w_name, name=None):
        return self.op("linear", [x], {}, {"w": w_name}, name)

    def bias(self, x, b_name, axis, name=None):
        return self.op("bias_add", [x], {"axis": int(axis)}, {"b": b_name}, name)

    def relu(self, x, name=None):
        return self.op("relu", [x], name=name)

    def sigmoid(self, x, name=None):
        return self.op("sigmoid", [x], name=name)

    def add(self, a, b, name=None):
        return self.op("add", [a, b], name=name)

    def maxpool3d(self, x, kernel, stride, name=None):
        return self.op("maxpool3d", [x], {"kernel": tuple(kernel), "stride": tuple(stride)}, name=name)

    def gap3d(self, x, name=None):
        return self.op("gap3d", [x], name=name)

    def nonlocal3d(self, x, wt, wp, wg, wo, name=None):
        return self.op("nonlocal3d", [x], {}, {"wt": wt, "wp": wp, "wg": wg, "wo": wo}, name)

    def nonlocal1d(self, x, wt, wp, wg, wo, name=None):
        return self.op("nonlocal1d", [x], {}, {"wt": wt, "wp": wp, "wg": wg, "wo": wo}, name)

    def concat(self, xs, axis, name=None):
        return self.op("concat", list(xs), {"axis": int(axis)}, name=name)

    def transpose2d(self, x, name=None):
        return self.op("transpose2d", [x], name=name)

    def output(self, tid: str) -> None:
        self._outputs.append(tid)

    def build(self) -> ComputeGraph:
        g = ComputeGraph(
            nodes=list(self._nodes),
            inputs=list(self._inputs),
            outputs=list(self._outputs),
            meta=dict(self._meta),
            params=dict(self._params),
            name=self._name,
        )
        g.validate()
        return g


# ---------------------------------------------------------------------------
# pass 1: operator fusion
# ---------------------------------------------------------------------------

_BIAS_AXIS = {"conv3d": 1, "conv1d": 0, "linear": -1}


def fuse(graph: ComputeGraph) -> ComputeGraph:
    """Collapse conv/linear -> bias_add -> relu chains with single-consumer
    intermediates into one fused node. Semantics preserved bitwise in F32."""
    cons = graph.consumers()
    out_set = set(graph.outputs)
    index_of = {n.output: i for i, n in enumerate(graph.nodes)}
    skip = set()
    new_nodes: List[Node] = []
    dead_tensors = set()
    for i, n in enumerate(graph.nodes):
        if i in skip:
            continue
        fused = None
        if n.kind in _BIAS_AXIS:
            t1 = n.output
            c1 = cons.get(t1, [])
            if len(c1) == 1 and t1 not in out_set:
                n2 = graph.nodes[c1[0]]
                if n2.kind == "bias_add" and _axis_matches(n2.attrs["axis"], _BIAS_AXIS[n.kind], len(graph.meta[t1].shape)):
                    t2 = n2.output
                    c2 = cons.get(t2, [])
                    if len(c2) == 1 and t2 not in out_set:
                        n3 = graph.nodes[c2[0]]
                        if n3.kind == "relu":
                            fused = Node(
                                name=f"{n.name}+bias+relu",
                                kind=f"{n.kind}_bias_relu",
                                inputs=n.inputs,
                                output=n3.output,
                                attrs=dict(n.attrs),
                                params={"w": n.params["w"], "b": n2.params["b"]},
                            )
                            skip.add(c1[0])
                            skip.add(c2[0])
                            dead_tensors.update((t1, t2))
        new_nodes.append(fused if fused is not None else n)
    meta = {t: m for t, m in graph.meta.items() if t not in dead_tensors}
    g = ComputeGraph(new_nodes, list(graph.inputs), list(graph.outputs), meta, dict(graph.params), graph.name)
    g.validate()
    return g


def _axis_matches(axis: int, canonical: int, ndim: int) -> bool:
    return axis % ndim == canonical % ndim


# ---------------------------------------------------------------------------
# pass 2: precision lowering
# ---------------------------------------------------------------------------

def lower_precision(graph: ComputeGraph, target: str = F16) -> ComputeGraph:
    """Tag every activation and parameter with the target precision.

    Parameters are rounded through binary16 immediately; activations are rounded
    by the executor after each node. Accumulation inside kernels stays float32.
    """
    if target != F16:
        raise GraphError(f"unsupported lowering target {target!r}")
    meta = {t: TensorMeta(m.shape, F16) for t, m in graph.meta.items()}
    params = {k: Tensor(v.data, F16) for k, v in graph.params.items()}
    g = ComputeGraph(list(graph.nodes), list(graph.inputs), list(graph.outputs), meta, params, graph.name)
    g.validate()
    return g


# ---------------------------------------------------------------------------
# pass 3: static memory planning
# ---------------------------------------------------------------------------

@dataclass
class MemoryPlan:
    """Static assignment of node-output tensors to offsets in one arena buffer.

    Offsets/sizes are tracked in elements; byte figures use each tensor's
    precision width (F32=4, F16=2). peak_bytes is the max over execution steps
    of live activation bytes (graph inputs included, parameters excluded).
    """

    buffers: List[int]                       # element size per buffer (single arena)
    assignment: Dict[str, Tuple[int, int]]   # tensor id -> (buffer id, element offset)
    peak_bytes: int
    naive_bytes: int
    arena_bytes: int
    lifetime: Dict[str, Tuple[int, int]]     # tensor id -> (birth step, death step)
    elems: Dict[str, int]
    tensor_bytes: Dict[str, int]

    def render_table(self) -> str:
        lines = [f"{'tensor':<24} {'elems':>10} {'bytes':>12} {'life':>9} {'buf':>4} {'offset':>10}"]
        for t in sorted(self.lifetime, key=lambda t: self.lifetime[t]):
            b, off = self.assignment.get(t, (-1, -1))
            lo, hi = self.lifetime[t]
            lines.append(
                f"{t:<24} {self.elems[t]:>10} {self.tensor_bytes[t]:>12} {f'{lo}..{hi}':>9} "
                f"{b if b >= 0 else '-':>4} {off if off >= 0 else 'input':>10}"
            )
        lines.append(
            f"peak {self.peak_bytes} B | naive {self.naive_bytes} B | arena {self.arena_bytes} B"
        )
        return "\n".join(lines)


def plan_memory(graph: ComputeGraph) -> MemoryPlan:
    """Lifetime analysis plus greedy best-fit placement of node outputs."""
    for t, m in graph.meta.items():
        if any(int(e) <= 0 for e in m.shape):
            raise GraphError(f"dynamic or empty extent on tensor {t}: {m.shape}")
    n_steps = len(graph.nodes)
    last_step = max(0, n_steps - 1)
    birth: Dict[str, int] = {t: 0 for t in graph.inputs}
    death: Dict[str, int] = {t: 0 for t in graph.inputs}
    for i, n in enumerate(graph.nodes):
        birth[n.output] = i
        death[n.output] = i
        for t in n.inputs:
            death[t] = max(death[t], i)
    for t in graph.outputs:
        death[t] = last_step
    elems = {t: graph.meta[t].elems for t in birth}
    tbytes = {t: graph.meta[t].nbytes for t in birth}

    live_per_step = [0] * max(1, n_steps)
    for t in birth:
        for s in range(birth[t], death[t] + 1):
            live_per_step[s] += tbytes[t]
    peak = max(live_per_step) if live_per_step else 0
    naive = sum(tbytes.values())

    planned = [n.output for n in graph.nodes]
    planned.sort(key=lambda t: (birth[t], -elems[t], t))
    placed: List[Tuple[int, int, str]] = []  # (offset, end, tid)
    assignment: Dict[str, Tuple[int, int]] = {}
    arena_elems = 0
    for t in planned:
        conflicts = sorted(
            (off, end)
            for off, end, other in placed
            if birth[t] <= death[other] and death[t] >= birth[other]
        )
        size = elems[t]
        best = None  # (gap_size, offset)
        cursor = 0
        for off, end in conflicts:
            if off - cursor >= size and (best is None or off - cursor < best[0]):
                best = (off - cursor, cursor)
            cursor = max(cursor, end)
        chosen = best[1] if best is not None else cursor
        placed.append((chosen, chosen + size, t))
        assignment[t] = (0, chosen)
        arena_elems = max(arena_elems, chosen + size)

    width = max((graph.meta[t].bytes_per_elem for t in planned), default=4)
    return MemoryPlan(
        buffers=[arena_elems],
        assignment=assignment,
        peak_bytes=peak,
        naive_bytes=naive,
        arena_bytes=arena_elems * width,
        lifetime={t: (birth[t], death[t]) for t in birth},
        elems=elems,
        tensor_bytes=tbytes,
    )


# ---------------------------------------------------------------------------
# executor
# ---------------------------------------------------------------------------

class GraphRunner:
    """Reusable executor: with a plan, the arena and conv workspace are
    allocated once and reused across calls (ahead-of-time static memory).
    One runner serves one execution context; calls are not thread-safe."""

    def __init__(self, graph: ComputeGraph, plan: Optional[MemoryPlan] = None):
        self.graph = graph
        self.plan = plan
        self.pool: Optional[np.ndarray] = None
        self.workspace: Optional[np.ndarray] = None
        if plan is not None:
            self.pool = np.empty(plan.buffers[0], dtype=np.float32)
            ws_elems = 0
            for n in graph.nodes:
                if n.kind in ("conv3d", "conv3d_bias_relu"):
                    w_shape = graph.params[n.params["w"]].shape
                    ws_elems = max(
                        ws_elems,
                        conv3d_workspace_elems(
                            graph.meta[n.inputs[0]].shape,
                            graph.meta[n.output].shape,
                            w_shape[1],
                            w_shape[2:],
                            n.attrs["pad"],
                        ),
                    )
            if ws_elems:
                self.workspace = np.empty(ws_elems, dtype=np.float32)
        self._last_use: Dict[str, int] = {}
        for i, n in enumerate(graph.nodes):
            for t in n.inputs:
                self._last_use[t] = i

    @property
    def static_bytes(self) -> int:
        total = self.pool.nbytes if self.pool is not None else 0
        return total + (self.workspace.nbytes if self.workspace is not None else 0)

    def run(
        self,
        inputs: Union[Dict[str, Tensor], Sequence[Tensor], Tensor],
        alloc_stats: Optional[dict] = None,
    ) -> List[Tensor]:
        graph, plan, pool = self.graph, self.plan, self.pool
        if isinstance(inputs, Tensor):
            inputs = [inputs]
        if not isinstance(inputs, dict):
            if len(inputs) != len(graph.inputs):
                raise GraphError(f"expected {len(graph.inputs)} inputs, got {len(inputs)}")
            inputs = dict(zip(graph.inputs, inputs))
        env: Dict[str, np.ndarray] = {}
        for t in graph.inputs:
            m = graph.meta[t]
            v = inputs[t]
            if tuple(v.shape) != m.shape:
                raise GraphError(f"input {t}: shape {tuple(v.shape)} != declared {m.shape}")
            env[t] = Tensor(v.data, m.precision).data
        if alloc_stats is not None and pool is not None:
            alloc_stats["pool_bytes"] = alloc_stats.get("pool_bytes", 0) + self.static_bytes

        out_set = set(graph.outputs)
        for i, n in enumerate(graph.nodes):
            m = graph.meta[n.output]
            dst = None
            if pool is not None and n.output in plan.assignment:
                _, off = plan.assignment[n.output]
                dst = pool[off:off + m.elems].reshape(m.shape)
            try:
                res = _run_node(graph, n, env, dst, self.workspace)
            except (ShapeError, GraphError) as e:
                raise GraphError(f"node {n.name}: {e}") from e
            if m.precision == F16:
                if res.base is pool or res is dst:
                    res[...] = round_f16(res)
                else:
                    res = round_f16(res)
            if alloc_stats is not None and dst is None:
                alloc_stats["fresh_bytes"] = alloc_stats.get("fresh_bytes", 0) + res.nbytes
            env[n.output] = res
            if pool is None:
                for t in n.inputs:
                    if self._last_use.get(t) == i and t not in out_set and t not in graph.inputs:
                        env.pop(t, None)

        outs = []
        for t in graph.outputs:
            arr = env[t]
            if pool is not None and arr.base is pool:
                arr = arr.copy()
            outs.append(Tensor(arr, graph.meta[t].precision))
        return outs


def execute(
    graph: ComputeGraph,
    inputs: Union[Dict[str, Tensor], Sequence[Tensor], Tensor],
    plan: Optional[MemoryPlan] = None,
    alloc_stats: Optional[dict] = None,
) -> List[Tensor]:
    """One-shot evaluation in topological order; results are independent of plan.

    With a plan, node outputs live in views of one pooled arena; without one,
    each node allocates fresh and dead intermediates are dropped eagerly. Use
    GraphRunner directly to amortize buffer setup across repeated calls.
    """
    return GraphRunner(graph, plan).run(inputs, alloc_stats=alloc_stats)


def _run_node(graph: ComputeGraph, n: Node, env: Dict[str, np.ndarray], dst, workspace=None):
    p = {slot: graph.params[name].data for slot, name in n.params.items()}
    x = env[n.inputs[0]] if n.inputs else None
    k = n.kind
    if k == "conv3d":
        return conv3d_raw(x, p["w"], None, n.attrs["stride"], n.attrs["pad"], n.attrs.get("dilation", (1, 1, 1)), out=dst, workspace=workspace)
    if k == "conv3d_bias_relu":
        return conv3d_raw(x, p["w"], p["b"], n.attrs["stride"], n.attrs["pad"], n.attrs.get("dilation", (1, 1, 1)), relu=True, out=dst, workspace=workspace)
    if k == "conv1d":
        return conv1d_raw(x, p["w"], n.attrs["dilation"], out=dst)
    if k == "conv1d_bias_relu":
        return conv1d_raw(x, p["w"], n.attrs["dilation"], b=p["b"], relu=True, out=dst)
    if k == "linear":
        return linear_raw(x, p["w"], out=dst)
    if k == "linear_bias_relu":
        return linear_raw(x, p["w"], b=p["b"], relu=True, out=dst)
    if k == "bias_add":
        axis = n.attrs["axis"] % x.ndim
        shape = [1] * x.ndim
        shape[axis] = p["b"].shape[0]
        b = p["b"].reshape(shape)
        if dst is not None:
            return np.add(x, b, out=dst)
        return x + b
    if k == "relu":
        if dst is not None:
            return np.maximum(x, 0.0, out=dst)
        return np.maximum(x, 0.0)
    if k == "sigmoid":
        res = 1.0 / (1.0 + np.exp(-x))
        if dst is not None:
            dst[...] = res
            return dst
        return res
    if k == "softmax":
        res = softmax_raw(x, n.attrs.get("axis", -1))
        if dst is not None:
            dst[...] = res
            return dst
        return res
    if k == "add":
        y = env[n.inputs[1]]
        if x.shape != y.shape:
            raise ShapeError(f"add shape mismatch {x.shape} vs {y.shape}")
        if dst is not None:
            return np.add(x, y, out=dst)
        return x + y
    if k == "maxpool3d":
        res = maxpool3d_raw(x, n.attrs["kernel"], n.attrs["stride"])
        if dst is not None:
            dst[...] = res
            return dst
        return res
    if k == "gap3d":
        res = np.mean(x, axis=(2, 3, 4), dtype=np.float32)
        if dst is not None:
            dst[...] = res
            return dst
        return res
    if k == "nonlocal3d":
        res = nonlocal_raw(x, p["wt"], p["wp"], p["wg"], p["wo"])
        if dst is not None:
            dst[...] = res
            return dst
        return res
    if k == "nonlocal1d":
        res = nonlocal_raw(x[None], p["wt"], p["wp"], p["wg"], p["wo"])[0]
        if dst is not None:
            dst[...] = res
            return dst
        return res
    if k == "transpose2d":
        res = np.ascontiguousarray(x.T)
        if dst is not None:
            dst[...] = res
            return dst
        return res
    if k == "concat":
        arrs = [env[t] for t in n.inputs]
        if dst is not None:
            np.concatenate(arrs, axis=n.attrs["axis"], out=dst)
            return dst
        return np.concatenate(arrs, axis=n.attrs["axis"])
    raise GraphError(f"unknown node kind {k!r}")


def optimize(
    graph: ComputeGraph,
    do_fuse: bool = True,
    do_fp16: bool = False,
    do_memplan: bool = True,
) -> Tuple[ComputeGraph, Optional[MemoryPlan]]:
    """Fixed pass pipeline: fuse -> lower_precision -> plan_memory."""
    g = graph
    if do_fuse:
        g = fuse(g)
    if do_fp16:
        g = lower_precision(g)
    plan = plan_memory(g) if do_memplan else None
    return g, plan
