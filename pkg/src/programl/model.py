"""Message passing network over program graphs, with hand-written
reverse-mode gradients.

State update per step::

    m_v = sum_{(w,v) in E}  A_{flow,fwd} (h_w * pos(e))
        + sum_{(v,w) in E}  A_{flow,bwd} (h_w * pos(e))
    h_v = GRU(h_v, m_v)

and per-vertex readout ``sigmoid(i([h_T, h_0])) * j(h_T)`` giving two class
scores.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .graph import FLOWS, ProgramGraph
from .vocab import Vocabulary, encode_vertex

N_EDGE_TYPES = 2 * len(FLOWS)  # (flow, direction), index = 2 * flow + direction


class ShapeError(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class ModelConfig:
    embed_dim: int = 32
    selector_dim: int = 2
    timesteps: int = 30
    learning_rate: float = 0.001
    batch_vertices: int = 4096
    max_epoch_graphs: int = 0  # 0: use every training instance each epoch
    epochs: int = 10
    checkpoint_graphs: int = 10_000
    val_graphs: int = 20_000
    max_seconds: float = 0.0  # 0: no wall-clock cap
    target_accuracy: float = 0.9999
    seed: int = 0
    selector_scale: float = 50.0
    dtype: str = "float64"

    def __post_init__(self) -> None:
        if self.embed_dim < 4 or self.embed_dim % 2:
            raise ValueError("embed_dim must be even and >= 4")
        if self.timesteps < 0:
            raise ValueError("timesteps must be >= 0")

    @property
    def hidden_dim(self) -> int:
        return self.embed_dim + self.selector_dim

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> ModelConfig:
        return cls(**json.loads(text))


# --------------------------------------------------------------------------
# Parameters

PARAM_NAMES = (
    "embedding", "messages", "gru_W", "gru_U", "gru_b",
    "i_W1", "i_b1", "i_W2", "i_b2", "j_W1", "j_b1", "j_W2", "j_b2",
)


@dataclass
class ModelParameters:
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.arrays[name] = value

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    def copy(self) -> ModelParameters:
        return ModelParameters({k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self) -> ModelParameters:
        return ModelParameters({k: np.zeros_like(v) for k, v in self.arrays.items()})

    @property
    def vocab_size(self) -> int:
        return self.arrays["embedding"].shape[0]


def init_params(config: ModelConfig, vocab_size: int, seed: int | None = None) -> ModelParameters:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    H, d = config.hidden_dim, config.embed_dim
    dtype = np.dtype(config.dtype)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    glorot = np.sqrt(6.0 / (2 * H))
    p = {
        "embedding": rng.standard_normal((vocab_size, d)).astype(dtype),
        "messages": rng.uniform(-glorot, glorot, size=(N_EDGE_TYPES, H, H)).astype(dtype),
        "gru_W": uniform((3, H, H), H),
        "gru_U": uniform((3, H, H), H),
        "gru_b": uniform((3, H), H),
        "i_W1": uniform((H, 2 * H), 2 * H),
        "i_b1": uniform((H,), 2 * H),
        "i_W2": uniform((2, H), H),
        "i_b2": uniform((2,), H),
        "j_W1": uniform((H, H), H),
        "j_b1": uniform((H,), H),
        "j_W2": uniform((2, H), H),
        "j_b2": uniform((2,), H),
    }
    return ModelParameters(p)


def check_shapes(params: ModelParameters, config: ModelConfig) -> None:
    H = config.hidden_dim
    expected = {
        "embedding": (params.vocab_size, config.embed_dim),
        "messages": (N_EDGE_TYPES, H, H),
        "gru_W": (3, H, H), "gru_U": (3, H, H), "gru_b": (3, H),
        "i_W1": (H, 2 * H), "i_b1": (H,), "i_W2": (2, H), "i_b2": (2,),
        "j_W1": (H, H), "j_b1": (H,), "j_W2": (2, H), "j_b2": (2,),
    }
    for name, shape in expected.items():
        if name not in params.arrays:
            raise ShapeError(f"missing parameter {name}")
        if params[name].shape != shape:
            raise ShapeError(f"{name} has shape {params[name].shape}, expected {shape}")


# --------------------------------------------------------------------------
# Position encoding

def position_encoding(position: int | np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding: sin at even, cos at odd components."""
    if dim % 2:
        raise ValueError("dim must be even")
    pos = np.asarray(position, dtype=np.float64)
    freq = 10000.0 ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    angle = pos[..., None] * freq
    out = np.empty(pos.shape + (dim,), dtype=np.float64)
    out[..., 0::2] = np.sin(angle)
    out[..., 1::2] = np.cos(angle)
    return out


# --------------------------------------------------------------------------
# Batches

@dataclass
class EncodedGraph:
    tokens: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    flow: np.ndarray
    position: np.ndarray

    @property
    def num_vertices(self) -> int:
        return len(self.tokens)


def encode_graph(graph: ProgramGraph, vocab: Vocabulary) -> EncodedGraph:
    tokens = np.fromiter((encode_vertex(v, vocab) for v in graph.vertices), dtype=np.int64,
                         count=len(graph.vertices))
    return EncodedGraph(tokens, graph.edge_src.copy(), graph.edge_dst.copy(),
                        graph.edge_flow.copy(), graph.edge_position.copy())


@dataclass
class GraphBatch:
    """Disjoint union of one or more graphs with per-vertex selectors,
    labels and a mask of vertices that count towards the loss."""
    tokens: np.ndarray
    selector: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    flow: np.ndarray
    position: np.ndarray
    graph_index: np.ndarray
    labels: np.ndarray
    eligible: np.ndarray
    num_graphs: int = 1
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_vertices(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_parts(cls, parts: Sequence[tuple[EncodedGraph, int, np.ndarray | None, np.ndarray | None]]) -> GraphBatch:
        """``parts`` holds (graph, root, labels, eligible) per graph; root < 0
        means no selected vertex."""
        offsets = np.cumsum([0] + [g.num_vertices for g, *_ in parts])
        tokens, selector, src, dst, flow, pos, gidx, labels, elig = ([] for _ in range(9))
        for k, (g, root, lab, el) in enumerate(parts):
            n, off = g.num_vertices, offsets[k]
            tokens.append(g.tokens)
            sel = np.zeros(n, dtype=np.int64)
            if root >= 0:
                sel[root] = 1
            selector.append(sel)
            src.append(g.src + off)
            dst.append(g.dst + off)
            flow.append(g.flow)
            pos.append(g.position)
            gidx.append(np.full(n, k, dtype=np.int64))
            labels.append(np.zeros(n, dtype=np.int64) if lab is None else lab.astype(np.int64))
            elig.append(np.ones(n, dtype=bool) if el is None else el)
        return cls(np.concatenate(tokens), np.concatenate(selector), np.concatenate(src),
                   np.concatenate(dst), np.concatenate(flow), np.concatenate(pos),
                   np.concatenate(gidx), np.concatenate(labels), np.concatenate(elig), len(parts))

    @classmethod
    def from_graph(cls, graph: ProgramGraph, vocab: Vocabulary, root: int = -1,
                   labels: np.ndarray | None = None, eligible: np.ndarray | None = None) -> GraphBatch:
        return cls.from_parts([(encode_graph(graph, vocab), root, labels, eligible)])

    def edge_types(self, dtype) -> list[tuple[np.ndarray, sp.csr_matrix, sp.csr_matrix, np.ndarray]]:
        """Per (flow, direction): source index, scatter matrix onto the
        receiving vertices, gather-transpose matrix onto the sources, and the
        position embedding of each edge."""
        key = ("edge_types", np.dtype(dtype).str)
        if key in self._cache:
            return self._cache[key]
        N = self.num_vertices
        out = []
        for f in range(len(FLOWS)):
            sel = self.flow == f
            s, d, p = self.src[sel], self.dst[sel], self.position[sel]
            for senders, receivers in ((s, d), (d, s)):
                E = len(senders)
                cols = np.arange(E)
                ones = np.ones(E, dtype=dtype)
                scatter = sp.csr_matrix((ones, (receivers, cols)), shape=(N, E))
                gather_t = sp.csr_matrix((ones, (senders, cols)), shape=(N, E))
                out.append((senders, scatter, gather_t, p))
        self._cache[key] = out
        return out


_POS_CACHE: dict[tuple[int, str], np.ndarray] = {}


def _position_table(max_pos: int, dim: int, dtype) -> np.ndarray:
    key = (dim, np.dtype(dtype).str)
    table = _POS_CACHE.get(key)
    if table is None or len(table) <= max_pos:
        size = max(512, 2 * (max_pos + 1))
        table = position_encoding(np.arange(size), dim).astype(dtype)
        _POS_CACHE[key] = table
    return table


# --------------------------------------------------------------------------
# Forward pass

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def initial_states(batch: GraphBatch, params: ModelParameters, config: ModelConfig) -> np.ndarray:
    emb = params["embedding"]
    if batch.num_vertices and batch.tokens.max() >= emb.shape[0]:
        raise ShapeError("token id outside the embedding table")
    sel = np.zeros((batch.num_vertices, config.selector_dim), dtype=emb.dtype)
    sel[np.arange(batch.num_vertices), np.minimum(batch.selector, config.selector_dim - 1)] = config.selector_scale
    return np.concatenate([emb[batch.tokens], sel], axis=1)


def _edge_inputs(batch: GraphBatch, dtype, H: int):
    types = batch.edge_types(dtype)
    max_pos = int(batch.position.max()) if len(batch.position) else 0
    table = _position_table(max_pos, H, dtype)
    return [(senders, scatter, gather_t, table[p]) for senders, scatter, gather_t, p in types]


def _messages(h: np.ndarray, edges, A: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    m = np.zeros_like(h)
    zs = []
    for k, (senders, scatter, _, pos) in enumerate(edges):
        if len(senders) == 0:
            zs.append(None)
            continue
        z = scatter @ (h[senders] * pos)
        zs.append(z)
        m += z @ A[k].T
    return m, zs


def _gru(h: np.ndarray, m: np.ndarray, params: ModelParameters):
    W, U, b = params["gru_W"], params["gru_U"], params["gru_b"]
    z = _sigmoid(m @ W[0].T + h @ U[0].T + b[0])
    r = _sigmoid(m @ W[1].T + h @ U[1].T + b[1])
    n = np.tanh(m @ W[2].T + (r * h) @ U[2].T + b[2])
    return z * h + (1.0 - z) * n, (z, r, n)


def propagate(batch: GraphBatch, params: ModelParameters, config: ModelConfig,
              return_all: bool = False):
    """Run ``config.timesteps`` message passing steps; returns h_T, or the
    list [h_0, ..., h_T] when ``return_all``."""
    check_shapes(params, config)
    h = initial_states(batch, params, config)
    edges = _edge_inputs(batch, h.dtype, config.hidden_dim)
    states = [h]
    for _ in range(config.timesteps):
        m, _ = _messages(h, edges, params["messages"])
        h, _ = _gru(h, m, params)
        states.append(h)
    return states if return_all else h


def _readout_parts(h_T: np.ndarray, h_0: np.ndarray, params: ModelParameters):
    x = np.concatenate([h_T, h_0], axis=1)
    ui = np.tanh(x @ params["i_W1"].T + params["i_b1"])
    gi = ui @ params["i_W2"].T + params["i_b2"]
    uj = np.tanh(h_T @ params["j_W1"].T + params["j_b1"])
    gj = uj @ params["j_W2"].T + params["j_b2"]
    return x, ui, gi, uj, gj


def readout_vertex(h_T: np.ndarray, h_0: np.ndarray, params: ModelParameters) -> np.ndarray:
    """Two class scores per vertex: sigmoid(i(h_T, h_0)) * j(h_T)."""
    if h_T.shape != h_0.shape or h_T.shape[1] != params["j_W1"].shape[1]:
        raise ShapeError(f"state shapes {h_T.shape} / {h_0.shape} do not match the readout")
    _, _, gi, _, gj = _readout_parts(h_T, h_0, params)
    return _sigmoid(gi) * gj


def readout_graph(h_T: np.ndarray, h_0: np.ndarray, params: ModelParameters,
                  graph_index: np.ndarray | None = None, num_graphs: int = 1) -> np.ndarray:
    """Sum of vertex scores per graph; shape (num_graphs, 2)."""
    scores = readout_vertex(h_T, h_0, params)
    if graph_index is None:
        return scores.sum(axis=0, keepdims=True)
    out = np.zeros((num_graphs, scores.shape[1]), dtype=scores.dtype)
    np.add.at(out, graph_index, scores)
    return out


def predict_proba(batch: GraphBatch, params: ModelParameters, config: ModelConfig) -> np.ndarray:
    states = propagate(batch, params, config, return_all=True)
    scores = readout_vertex(states[-1], states[0], params)
    scores = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=1, keepdims=True)


# --------------------------------------------------------------------------
# Loss and gradients

def loss_and_grads(batch: GraphBatch, params: ModelParameters, config: ModelConfig,
                   need_grads: bool = True) -> tuple[float, ModelParameters | None]:
    """Mean two-class cross-entropy over eligible vertices and its gradient
    with respect to every parameter."""
    check_shapes(params, config)
    mask = batch.eligible
    n_elig = int(mask.sum())
    if n_elig == 0:
        raise ValueError("batch has no eligible vertices")
    A = params["messages"]
    with np.errstate(over="ignore", invalid="ignore"):
        h0 = initial_states(batch, params, config)
        edges = _edge_inputs(batch, h0.dtype, config.hidden_dim)
        states = [h0]
        h = h0
        for _ in range(config.timesteps):
            m, _ = _messages(h, edges, A)
            h, _ = _gru(h, m, params)
            states.append(h)
        h_T = states[-1]
        x, ui, gi, uj, gj = _readout_parts(h_T, h0, params)
        gate = _sigmoid(gi)
        s = gate * gj
        s_max = s.max(axis=1, keepdims=True)
        log_z = s_max[:, 0] + np.log(np.exp(s - s_max).sum(axis=1))
        y = batch.labels
        nll = log_z - s[np.arange(len(y)), y]
        loss = float(nll[mask].sum() / n_elig)
    if not np.isfinite(loss) or not np.all(np.isfinite(h_T)):
        raise NonFiniteLoss(f"non-finite loss {loss}")
    if not need_grads:
        return loss, None

    g = params.zeros_like()
    p = np.exp(s - log_z[:, None])
    ds = p
    ds[np.arange(len(y)), y] -= 1.0
    ds[~mask] = 0.0
    ds /= n_elig

    # readout
    dgj = ds * gate
    dgi = ds * gj * gate * (1.0 - gate)
    g["j_W2"] += dgj.T @ uj
    g["j_b2"] += dgj.sum(axis=0)
    daj = (dgj @ params["j_W2"]) * (1.0 - uj * uj)
    g["j_W1"] += daj.T @ h_T
    g["j_b1"] += daj.sum(axis=0)
    dh = daj @ params["j_W1"]
    g["i_W2"] += dgi.T @ ui
    g["i_b2"] += dgi.sum(axis=0)
    dai = (dgi @ params["i_W2"]) * (1.0 - ui * ui)
    g["i_W1"] += dai.T @ x
    g["i_b1"] += dai.sum(axis=0)
    dx = dai @ params["i_W1"]
    H = config.hidden_dim
    dh += dx[:, :H]
    dh0_direct = dx[:, H:]

    # unrolled GRU steps, recomputing each step's activations
    W, U = params["gru_W"], params["gru_U"]
    for t in range(config.timesteps, 0, -1):
        hp = states[t - 1]
        m, zs = _messages(hp, edges, A)
        z = _sigmoid(m @ W[0].T + hp @ U[0].T + params["gru_b"][0])
        r = _sigmoid(m @ W[1].T + hp @ U[1].T + params["gru_b"][1])
        rh = r * hp
        n = np.tanh(m @ W[2].T + rh @ U[2].T + params["gru_b"][2])

        dz = dh * (hp - n)
        dn = dh * (1.0 - z)
        dhp = dh * z
        dan = dn * (1.0 - n * n)
        g["gru_W"][2] += dan.T @ m
        g["gru_U"][2] += dan.T @ rh
        g["gru_b"][2] += dan.sum(axis=0)
        dm = dan @ W[2]
        drh = dan @ U[2]
        dr = drh * hp
        dhp += drh * r
        dar = dr * r * (1.0 - r)
        g["gru_W"][1] += dar.T @ m
        g["gru_U"][1] += dar.T @ hp
        g["gru_b"][1] += dar.sum(axis=0)
        dm += dar @ W[1]
        dhp += dar @ U[1]
        daz = dz * z * (1.0 - z)
        g["gru_W"][0] += daz.T @ m
        g["gru_U"][0] += daz.T @ hp
        g["gru_b"][0] += daz.sum(axis=0)
        dm += daz @ W[0]
        dhp += daz @ U[0]

        for k, (senders, scatter, gather_t, pos) in enumerate(edges):
            if zs[k] is None:
                continue
            g["messages"][k] += dm.T @ zs[k]
            dzk = dm @ A[k]
            dhp += gather_t @ ((scatter.T @ dzk) * pos)
        dh = dhp

    dh0 = dh + dh0_direct
    np.add.at(g["embedding"], batch.tokens, dh0[:, :config.embed_dim])
    return loss, g


# --------------------------------------------------------------------------
# Optimizer

class Adam:
    def __init__(self, params: ModelParameters, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: ModelParameters, grads: ModelParameters) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, grad in grads.items():
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
