"""Part-partitioned graph convolution over the skeleton and the spatial feature.

Forward path for a batch of motions (B, T, D):

    node features (B, T, N, 9)        rotation 6D + root-relative position
    -> L part-graph layers            relu(sum_k A_k F W_k), per frame
    -> strided temporal conv stack    edge-padded, kernel 3, stride 2
    -> mean over remaining frames     (B, N, C)
    -> cosine similarity              (B, N, N)
    -> strict upper triangle -> linear projection to the condition width
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .motion import MotionSequence, PoseLayout, Skeleton, check_compatible

GCN_PARTS = ("left arm", "right arm", "torso", "left leg", "right leg")
NODE_DIM = 9


def gcn_part(skeleton: Skeleton, joint: int) -> str:
    part = skeleton.parts[joint]
    return "torso" if part == "pelvis" else part


@dataclass
class MotionGraph:
    features: np.ndarray                     # (T, N, 9)
    spatial_edges: list[tuple[int, int]]     # per-frame anatomical edges
    num_frames: int
    num_joints: int

    @property
    def num_nodes(self) -> int:
        return self.num_frames * self.num_joints

    def node(self, t: int, i: int) -> int:
        return t * self.num_joints + i

    @property
    def edges(self) -> list[tuple[int, int]]:
        out = []
        for t in range(self.num_frames):
            out += [(self.node(t, i), self.node(t, j)) for i, j in self.spatial_edges]
        for t in range(self.num_frames - 1):
            out += [(self.node(t, i), self.node(t + 1, i)) for i in range(self.num_joints)]
        return out

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        for u, v in self.edges:
            a[u, v] = a[v, u] = 1.0
        return a


def node_features(frames: np.ndarray, layout: PoseLayout) -> np.ndarray:
    """(…, T, D) pose rows -> (…, T, N, 9) node features; the root row is zero."""
    frames = np.asarray(frames)
    if frames.shape[-1] != layout.total_dim:
        raise ValueError(f"row width {frames.shape[-1]} != layout dim {layout.total_dim}")
    n = layout.num_joints
    lead = frames.shape[:-1]
    rot = frames[..., layout.group("joint_rotations")].reshape(lead + (n - 1, 6))
    pos = frames[..., layout.group("joint_positions")].reshape(lead + (n - 1, 3))
    out = np.zeros(lead + (n, NODE_DIM))
    out[..., 1:, :6] = rot
    out[..., 1:, 6:] = pos
    return out


def build_graph(x: MotionSequence, skeleton: Skeleton) -> MotionGraph:
    check_compatible(x.layout, skeleton)
    feats = node_features(x.frames, x.layout)
    return MotionGraph(feats, skeleton.edges, x.num_frames, skeleton.num_joints)


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2."""
    a_hat = a + np.eye(a.shape[0])
    d = a_hat.sum(1)
    inv = 1.0 / np.sqrt(d)
    return a_hat * inv[:, None] * inv[None, :]


@dataclass
class AdjacencySubsets:
    names: tuple[str, ...]
    raw: list[np.ndarray]          # edge indicator matrices, no self-loops
    normalized: list[np.ndarray]
    edge_sets: list[list[tuple[int, int]]] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.names)


def build_adjacency_subsets(skeleton: Skeleton) -> AdjacencySubsets:
    n = skeleton.num_joints
    names = GCN_PARTS + ("inter-part",)
    edge_sets: list[list[tuple[int, int]]] = [[] for _ in names]
    for p, c in skeleton.edges:
        pp, pc = gcn_part(skeleton, p), gcn_part(skeleton, c)
        idx = GCN_PARTS.index(pp) if pp == pc else len(GCN_PARTS)
        edge_sets[idx].append((p, c))
    raw = []
    for edges in edge_sets:
        a = np.zeros((n, n))
        for i, j in edges:
            a[i, j] = a[j, i] = 1.0
        raw.append(a)
    return AdjacencySubsets(names, raw, [normalize_adjacency(a) for a in raw], edge_sets)


def aggregate(features: np.ndarray, adjacency: list[np.ndarray], weights: list[np.ndarray]) -> np.ndarray:
    """relu(sum_k A_k F W_k) applied over the trailing (N, C) axes.

    Weights may carry leading batch axes that broadcast against ``features``.
    """
    if len(adjacency) != len(weights):
        raise ValueError("need one weight matrix per adjacency subset")
    if features.shape[-1] != weights[0].shape[-2]:
        raise ValueError(f"feature width {features.shape[-1]} != weight input {weights[0].shape[-2]}")
    z = sum(np.einsum("ij,...jc->...ic", a, features) @ w for a, w in zip(adjacency, weights))
    return np.maximum(z, 0.0)


def _conv_windows(g: np.ndarray, kernel: int, stride: int):
    """Edge-padded strided windows over axis 1 of (B, T, N, C)."""
    pad = kernel // 2
    gp = np.concatenate([np.repeat(g[:, :1], pad, 1), g, np.repeat(g[:, -1:], pad, 1)], axis=1)
    t_out = (g.shape[1] - 1) // stride + 1
    idx = stride * np.arange(t_out)[:, None] + np.arange(kernel)[None, :]
    return gp[:, idx], idx, pad


def temporal_compress(features: np.ndarray, convs: list[tuple[np.ndarray, np.ndarray]],
                      stride: int = 2) -> np.ndarray:
    """Strided temporal convolutions then mean over frames: (B, T, N, C) -> (B, N, C')."""
    g = features
    for w, b in convs:
        win, _, _ = _conv_windows(g, w.shape[0], stride)
        g = np.einsum("btknc,kcd->btnd", win, w) + b
    return g.mean(axis=1)


def similarity(f: np.ndarray) -> np.ndarray:
    """Cosine similarity between rows (…, N, C) -> (…, N, N); zero rows give zero rows."""
    norm = np.linalg.norm(f, axis=-1, keepdims=True)
    fn = np.divide(f, norm, out=np.zeros_like(f), where=norm > 0)
    s = fn @ np.swapaxes(fn, -1, -2)
    return 0.5 * (s + np.swapaxes(s, -1, -2))


@dataclass(frozen=True)
class GcnConfig:
    num_joints: int
    hidden: tuple[int, ...] = (32, 32)
    conv_layers: int = 1
    kernel: int = 3
    stride: int = 2
    cond_dim: int = 64

    @property
    def num_pairs(self) -> int:
        return self.num_joints * (self.num_joints - 1) // 2


@dataclass
class GcnParams:
    config: GcnConfig
    tensors: dict[str, np.ndarray]
    num_subsets: int = 6

    def copy(self) -> "GcnParams":
        return GcnParams(self.config, {k: v.copy() for k, v in self.tensors.items()}, self.num_subsets)

    @property
    def num_params(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_gcn(cfg: GcnConfig, num_subsets: int = 6, seed: int = 0) -> GcnParams:
    rng = np.random.default_rng(seed)
    t = {}
    c_in = NODE_DIM
    for l, c_out in enumerate(cfg.hidden):
        for k in range(num_subsets):
            t[f"gcn{l}.w{k}"] = rng.uniform(-1, 1, (c_in, c_out)) / np.sqrt(c_in)
        c_in = c_out
    for i in range(cfg.conv_layers):
        t[f"tconv{i}.w"] = rng.uniform(-1, 1, (cfg.kernel, c_in, c_in)) / np.sqrt(cfg.kernel * c_in)
        # nonzero so joints with an all-zero neighbourhood avoid the zero-row kink of the cosine
        t[f"tconv{i}.b"] = rng.uniform(-0.1, 0.1, c_in)
    t["sp_proj.w"] = rng.uniform(-1, 1, (cfg.cond_dim, cfg.num_pairs)) / np.sqrt(cfg.num_pairs)
    t["sp_proj.b"] = np.zeros(cfg.cond_dim)
    return GcnParams(cfg, t, num_subsets)


def spatial_feature_vector(s: np.ndarray, params: GcnParams) -> np.ndarray:
    """Strict upper triangle of S through the learnable projection."""
    n = s.shape[-1]
    iu = np.triu_indices(n, 1)
    return s[..., iu[0], iu[1]] @ params.tensors["sp_proj.w"].T + params.tensors["sp_proj.b"]


def gcn_forward(params: GcnParams, subsets: AdjacencySubsets, feats: np.ndarray):
    """(B, T, N, 9) node features -> ((B, cond_dim) spatial vector, cache)."""
    cfg = params.config
    t = params.tensors
    if feats.ndim != 4 or feats.shape[2] != cfg.num_joints:
        raise ValueError(f"node features must be (B, T, {cfg.num_joints}, 9), got {feats.shape}")
    adj = subsets.normalized
    h = feats
    layers = []
    for l in range(len(cfg.hidden)):
        ah = [np.einsum("ij,btjc->btic", a, h) for a in adj]
        z = sum(x @ t[f"gcn{l}.w{k}"] for k, x in enumerate(ah))
        layers.append((ah, z))
        h = np.maximum(z, 0.0)
    convs = []
    g = h
    for i in range(cfg.conv_layers):
        w, b = t[f"tconv{i}.w"], t[f"tconv{i}.b"]
        win, idx, pad = _conv_windows(g, cfg.kernel, cfg.stride)
        convs.append((win, idx, pad, g.shape))
        g = np.einsum("btknc,kcd->btnd", win, w) + b
    t_out = g.shape[1]
    f = g.mean(axis=1)
    norm = np.linalg.norm(f, axis=-1, keepdims=True)
    fn = np.divide(f, norm, out=np.zeros_like(f), where=norm > 0)
    s = similarity(f)
    iu = np.triu_indices(cfg.num_joints, 1)
    s_flat = s[:, iu[0], iu[1]]
    out = s_flat @ t["sp_proj.w"].T + t["sp_proj.b"]
    cache = dict(layers=layers, convs=convs, t_out=t_out, norm=norm, fn=fn, s_flat=s_flat, iu=iu)
    return out, cache


def gcn_backward(params: GcnParams, subsets: AdjacencySubsets, cache, d_out: np.ndarray) -> dict[str, np.ndarray]:
    cfg = params.config
    t = params.tensors
    g = {}
    g["sp_proj.w"] = d_out.T @ cache["s_flat"]
    g["sp_proj.b"] = d_out.sum(0)
    ds_flat = d_out @ t["sp_proj.w"]
    B = d_out.shape[0]
    n = cfg.num_joints
    iu = cache["iu"]
    ds = np.zeros((B, n, n))
    ds[:, iu[0], iu[1]] = ds_flat
    fn, norm = cache["fn"], cache["norm"]
    dfn = (ds + np.swapaxes(ds, 1, 2)) @ fn
    radial = (fn * dfn).sum(-1, keepdims=True)
    df = np.divide(dfn - fn * radial, norm, out=np.zeros_like(dfn), where=norm > 0)
    dg = np.broadcast_to(df[:, None] / cache["t_out"], (B, cache["t_out"]) + df.shape[1:])
    for i in reversed(range(cfg.conv_layers)):
        win, idx, pad, in_shape = cache["convs"][i]
        w = t[f"tconv{i}.w"]
        g[f"tconv{i}.w"] = np.einsum("btknc,btnd->kcd", win, dg)
        g[f"tconv{i}.b"] = dg.sum((0, 1, 2))
        dwin = np.einsum("btnd,kcd->btknc", dg, w)
        t_in = in_shape[1]
        dgp = np.zeros((in_shape[0], t_in + 2 * pad) + in_shape[2:])
        np.add.at(dgp, (slice(None), idx), dwin)
        dprev = dgp[:, pad:pad + t_in].copy()
        dprev[:, 0] += dgp[:, :pad].sum(1)
        dprev[:, -1] += dgp[:, pad + t_in:].sum(1)
        dg = dprev
    dh = dg
    for l in reversed(range(len(cfg.hidden))):
        ah, z = cache["layers"][l]
        dz = dh * (z > 0)
        dh = 0.0
        for k, x in enumerate(ah):
            w = t[f"gcn{l}.w{k}"]
            g[f"gcn{l}.w{k}"] = np.einsum("btic,btid->cd", x, dz)
            if l > 0:
                dh = dh + np.einsum("ij,btic->btjc", subsets.normalized[k], dz @ w.T)
    return g


def spatial_condition(params: GcnParams, subsets: AdjacencySubsets, x_inter: np.ndarray,
                      layout: PoseLayout) -> np.ndarray:
    """Spatial condition vectors for a batch of (B, T, D) interactive motions."""
    out, _ = gcn_forward(params, subsets, node_features(x_inter, layout))
    return out
