"""Adaptive graph-convolution student: 2D pose -> per-joint depth offsets.

Feature matrices follow the (..., D, N) layout: one column per joint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, Tensor

PREFIX = "student."


@dataclass
class SkeletonGraph:
    n_joints: int
    edges: list[tuple[int, int]]
    root_index: int = 0
    adjacency: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.n_joints
        if not 0 <= self.root_index < n:
            raise ValueError(f"root {self.root_index} out of range for {n} joints")
        a = np.eye(n)
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) out of range for {n} joints")
            a[i, j] = a[j, i] = 1.0
        self.edges = [tuple(e) for e in self.edges]
        self.adjacency = a
        if not self._connected():
            raise ValueError("skeleton graph is not connected")

    def _connected(self) -> bool:
        seen = {0}
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in np.flatnonzero(self.adjacency[i]):
                if j not in seen:
                    seen.add(int(j))
                    frontier.append(int(j))
        return len(seen) == self.n_joints

    @classmethod
    def from_json(cls, path) -> SkeletonGraph:
        with open(path) as fh:
            doc = json.load(fh)
        try:
            return cls(int(doc["n_joints"]), [tuple(e) for e in doc["edges"]], int(doc.get("root", 0)))
        except KeyError as exc:
            raise ValueError(f"skeleton file {path}: missing key {exc}") from None

    def to_json(self, path) -> None:
        Path(path).write_text(
            json.dumps({"n_joints": self.n_joints, "root": self.root_index, "edges": [list(e) for e in self.edges]})
        )

    @classmethod
    def fully_connected(cls, n: int, root_index: int = 0) -> SkeletonGraph:
        return cls(n, [(i, j) for i in range(n) for j in range(i + 1, n)], root_index)


def default_skeleton() -> SkeletonGraph:
    """The 17-joint Human3.6M skeleton shipped with the package."""
    with resources.as_file(resources.files("poselift") / "h36m_skeleton.json") as p:
        return SkeletonGraph.from_json(p)


@dataclass
class StudentConfig:
    n_joints: int = 17
    width: int = 64
    n_blocks: int = 8
    physical: bool = True
    nonphysical: bool = True
    literal_eq4: bool = False
    root_index: int = 0
    input_scale: float = 10.0

    def __post_init__(self):
        if not (self.physical or self.nonphysical):
            raise ValueError("at least one graph branch must be enabled")
        if self.n_blocks % 2:
            raise ValueError("n_blocks must be even (skips span pairs of blocks)")


@dataclass
class AGCBlockParams:
    """Trainable tensors of one adaptive graph-convolution layer."""

    M: Tensor | None = None  # (D', N, N) edge weights
    w: Tensor | None = None  # (D', D); row d is w_d
    W1: Tensor | None = None  # (D, D)
    W2: Tensor | None = None  # (D, D)
    g_W: Tensor | None = None  # (D', D)
    g_b: Tensor | None = None
    f_W1: Tensor | None = None  # (D', D')
    f_b1: Tensor | None = None
    f_W2: Tensor | None = None
    f_b2: Tensor | None = None

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str) -> AGCBlockParams:
        kw = {}
        for name in cls.__dataclass_fields__:
            key = prefix + name
            if key in store:
                kw[name] = store[key]
        return cls(**kw)


def physical_graph_conv(H, blk: AGCBlockParams, graph: SkeletonGraph, literal_eq4: bool = False) -> Tensor:
    """Channel d = ReLU(w_d · H · softmax_col(M_d restricted to A)).

    ``literal_eq4`` multiplies M_d by A instead of masking, so non-edges keep
    softmax mass exp(0).
    """
    H = dc.as_tensor(H)
    A = graph.adjacency
    if literal_eq4:
        S = dc.column_softmax(blk.M * A)
    else:
        S = dc.column_softmax(blk.M, mask=np.broadcast_to(A, blk.M.shape))
    Z = dc.matmul(blk.w, H)  # (..., D', N)
    if Z.ndim == 2:
        out = dc.matmul(Z.reshape((Z.shape[0], 1, Z.shape[1])), S).reshape(Z.shape)
    else:
        # channel-major so each channel multiplies its own (N, N) matrix
        out = dc.matmul(Z.swapaxes(0, 1), S).swapaxes(0, 1)
    return dc.relu(out)


def nonphysical_graph_conv(H, blk: AGCBlockParams) -> Tensor:
    """f( g(H) · softmax_col(Hᵀ W1ᵀ W2 H) ) over all joint pairs."""
    H = dc.as_tensor(H)
    Q = dc.matmul(blk.W1, H)
    K = dc.matmul(blk.W2, H)
    attn = dc.column_softmax(dc.matmul(Q.T, K))
    G = dc.linear(H, blk.g_W, blk.g_b)
    agg = dc.matmul(G, attn)
    hidden = dc.relu(dc.linear(agg, blk.f_W1, blk.f_b1))
    return dc.linear(hidden, blk.f_W2, blk.f_b2)


def agc_layer(H, blk: AGCBlockParams, graph: SkeletonGraph, cfg: StudentConfig | None = None) -> Tensor:
    """Sum of the physical and nonphysical branch outputs."""
    physical = cfg.physical if cfg else True
    nonphysical = cfg.nonphysical if cfg else True
    literal = cfg.literal_eq4 if cfg else False
    out = None
    if physical:
        out = physical_graph_conv(H, blk, graph, literal)
    if nonphysical:
        np_out = nonphysical_graph_conv(H, blk)
        if out is not None and out.shape != np_out.shape:
            raise ValueError(f"branch shape mismatch {out.shape} vs {np_out.shape}")
        out = np_out if out is None else out + np_out
    return out


def _he(rng, fan_out, fan_in, gain=2.0):
    return rng.standard_normal((fan_out, fan_in)) * np.sqrt(gain / fan_in)


def init_block(store: ParamStore, prefix: str, cfg: StudentConfig, rng: np.random.Generator) -> None:
    d, n = cfg.width, cfg.n_joints
    if cfg.physical:
        store.add(prefix + "M", np.zeros((d, n, n)))
        store.add(prefix + "w", _he(rng, d, d))
    if cfg.nonphysical:
        store.add(prefix + "W1", rng.standard_normal((d, d)) / d)
        store.add(prefix + "W2", rng.standard_normal((d, d)) / d)
        store.add(prefix + "g_W", _he(rng, d, d, gain=1.0))
        store.add(prefix + "g_b", np.zeros(d))
        store.add(prefix + "f_W1", _he(rng, d, d))
        store.add(prefix + "f_b1", np.zeros(d))
        store.add(prefix + "f_W2", _he(rng, d, d, gain=1.0))
        store.add(prefix + "f_b2", np.zeros(d))


def init_student(cfg: StudentConfig, rng: np.random.Generator) -> ParamStore:
    p = ParamStore()
    d = cfg.width
    p.add(PREFIX + "embed.W", _he(rng, d, 2, gain=1.0))
    p.add(PREFIX + "embed.b", np.zeros(d))
    for i in range(cfg.n_blocks):
        init_block(p, f"{PREFIX}block{i}.", cfg, rng)
    p.add(PREFIX + "head.W", _he(rng, 1, d, gain=1.0) * 0.1)
    p.add(PREFIX + "head.b", np.zeros(1))
    return p


def student_forward(x, params: ParamStore, cfg: StudentConfig, graph: SkeletonGraph) -> Tensor:
    """Depth offsets (B, N) (or (N,) for one pose) with the root pinned at 0."""
    x = dc.as_tensor(x)
    single = x.ndim == 2
    if single:
        x = x.reshape((1,) + x.shape)
    if x.shape[-1] != cfg.n_joints:
        raise ValueError(f"student expects {cfg.n_joints} joints, got {x.shape[-1]}")
    h = dc.linear(x * cfg.input_scale, params[PREFIX + "embed.W"], params[PREFIX + "embed.b"])
    for i in range(0, cfg.n_blocks, 2):
        skip = h
        for j in (i, i + 1):
            blk = AGCBlockParams.from_store(params, f"{PREFIX}block{j}.")
            h = dc.relu(agc_layer(h, blk, graph, cfg))
        h = h + skip
    raw = dc.linear(h, params[PREFIX + "head.W"], params[PREFIX + "head.b"])  # (B, 1, N)
    raw = raw.reshape((raw.shape[0], raw.shape[-1]))
    r = cfg.root_index
    d = raw - raw[:, r : r + 1]
    return d[0] if single else d
