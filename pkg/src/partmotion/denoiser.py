"""Frame-wise residual MLP that predicts clean motion, with manual backprop.

Each frame row is concatenated with the step embedding, a frame-index
embedding and four projected condition vectors (text, part mask,
instruction, spatial feature), then passed through

    h0 = W_in z + b_in
    h_{k+1} = h_k + relu(W_k h_k + b_k)
    y = W_out h_L + b_out

A dropped condition contributes a zero vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoders import sinusoidal, time_embed

COND_NAMES = ("text", "mask", "instruction", "spatial")


@dataclass(frozen=True)
class DenoiserConfig:
    pose_dim: int
    width: int = 128
    depth: int = 4
    time_dim: int = 64
    frame_dim: int = 16
    text_dim: int = 64
    cond_dim: int = 64
    num_steps: int = 50

    @property
    def input_dim(self) -> int:
        return self.pose_dim + self.time_dim + self.frame_dim + 4 * self.cond_dim


@dataclass
class DenoiserParams:
    config: DenoiserConfig
    tensors: dict[str, np.ndarray]

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    @property
    def num_params(self) -> int:
        return sum(v.size for v in self.tensors.values())


def param_shapes(cfg: DenoiserConfig) -> dict[str, tuple[int, ...]]:
    C, H, D, E = cfg.cond_dim, cfg.width, cfg.pose_dim, cfg.text_dim
    shapes = {
        "text_proj.w": (C, E), "text_proj.b": (C,),
        "mask_proj.w": (C, D), "mask_proj.b": (C,),
        "instr_proj.w": (C, E), "instr_proj.b": (C,),
        "in.w": (H, cfg.input_dim), "in.b": (H,),
    }
    for k in range(cfg.depth):
        shapes[f"block{k}.w"] = (H, H)
        shapes[f"block{k}.b"] = (H,)
    shapes["out.w"] = (D, H)
    shapes["out.b"] = (D,)
    return shapes


def init_denoiser(cfg: DenoiserConfig, seed: int = 0) -> DenoiserParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[1])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return DenoiserParams(cfg, tensors)


def zeros_like(params: DenoiserParams) -> DenoiserParams:
    return DenoiserParams(params.config, {k: np.zeros_like(v) for k, v in params.tensors.items()})


@dataclass
class ConditionBundle:
    """Batched conditions; every array has a leading batch axis."""
    text: np.ndarray
    mask: np.ndarray
    instruction: np.ndarray
    spatial: np.ndarray | None = None
    drop: np.ndarray | None = None  # (B, 4) bool, order COND_NAMES

    def __post_init__(self):
        self.text = np.atleast_2d(self.text)
        self.mask = np.atleast_2d(self.mask)
        self.instruction = np.atleast_2d(self.instruction)
        if self.spatial is not None:
            self.spatial = np.atleast_2d(self.spatial)
        b = self.text.shape[0]
        if self.drop is None:
            self.drop = np.zeros((b, 4), dtype=bool)
            if self.spatial is None:
                self.drop[:, 3] = True
        self.drop = np.atleast_2d(np.asarray(self.drop, dtype=bool))

    @property
    def batch_size(self) -> int:
        return self.text.shape[0]

    def dropped(self, which=COND_NAMES) -> "ConditionBundle":
        drop = self.drop.copy()
        for name in which:
            drop[:, COND_NAMES.index(name)] = True
        return ConditionBundle(self.text, self.mask, self.instruction, self.spatial, drop)

    def with_spatial(self, spatial: np.ndarray | None) -> "ConditionBundle":
        drop = self.drop.copy()
        if spatial is None:
            drop[:, 3] = True
        return ConditionBundle(self.text, self.mask, self.instruction, spatial, drop)


def text_project(emb: np.ndarray, params: DenoiserParams, which: str = "text") -> np.ndarray:
    key = {"text": "text_proj", "instruction": "instr_proj"}[which]
    return emb @ params.tensors[key + ".w"].T + params.tensors[key + ".b"]


def mask_project(bits, params: DenoiserParams) -> np.ndarray:
    bits = np.asarray(getattr(bits, "bits", bits), dtype=np.float64)
    w = params.tensors["mask_proj.w"]
    if bits.shape[-1] != w.shape[1]:
        raise ValueError(f"mask length {bits.shape[-1]} != pose dim {w.shape[1]}")
    return bits @ w.T + params.tensors["mask_proj.b"]


def _check_finite(params: DenoiserParams) -> None:
    for name, v in params.tensors.items():
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite values in parameter {name}")


def _cond_vectors(params: DenoiserParams, conds: ConditionBundle) -> list[np.ndarray]:
    cfg = params.config
    vecs = [
        text_project(conds.text, params, "text"),
        mask_project(conds.mask, params),
        text_project(conds.instruction, params, "instruction"),
        conds.spatial if conds.spatial is not None else np.zeros((conds.batch_size, cfg.cond_dim)),
    ]
    keep = ~conds.drop
    return [v * keep[:, i : i + 1] for i, v in enumerate(vecs)]


def forward(params: DenoiserParams, x_t: np.ndarray, t, conds: ConditionBundle):
    """Returns ``(x0_hat, cache)``; ``x_t`` is (B, T, D)."""
    cfg = params.config
    _check_finite(params)
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.ndim != 3 or x_t.shape[2] != cfg.pose_dim:
        raise ValueError(f"x_t must be (B, T, {cfg.pose_dim}), got {x_t.shape}")
    B, T, D = x_t.shape
    if conds.batch_size != B:
        raise ValueError(f"condition batch {conds.batch_size} != motion batch {B}")
    if conds.spatial is not None and conds.spatial.shape[1] != cfg.cond_dim:
        raise ValueError("spatial feature width != cond_dim")
    t = np.broadcast_to(np.asarray(t), (B,))
    temb = time_embed(t, cfg.num_steps, cfg.time_dim)            # (B, Et)
    femb = sinusoidal(np.arange(T), cfg.frame_dim)               # (T, Ef)
    cvec = np.concatenate(_cond_vectors(params, conds), axis=1)  # (B, 4C)
    z = np.concatenate([
        x_t,
        np.broadcast_to(temb[:, None, :], (B, T, cfg.time_dim)),
        np.broadcast_to(femb[None, :, :], (B, T, cfg.frame_dim)),
        np.broadcast_to(cvec[:, None, :], (B, T, cvec.shape[1])),
    ], axis=2).reshape(B * T, cfg.input_dim)
    p = params.tensors
    h = z @ p["in.w"].T + p["in.b"]
    hs, pre = [h], []
    for k in range(cfg.depth):
        a = h @ p[f"block{k}.w"].T + p[f"block{k}.b"]
        pre.append(a)
        h = h + np.maximum(a, 0.0)
        hs.append(h)
    y = h @ p["out.w"].T + p["out.b"]
    cache = {"z": z, "hs": hs, "pre": pre, "conds": conds, "shape": (B, T, D)}
    return y.reshape(B, T, D), cache


def predict_x0(params: DenoiserParams, x_t: np.ndarray, t, conds: ConditionBundle) -> np.ndarray:
    squeeze = np.ndim(x_t) == 2
    if squeeze:
        x_t = x_t[None]
    y, _ = forward(params, x_t, t, conds)
    return y[0] if squeeze else y


def backward(params: DenoiserParams, cache, d_out: np.ndarray):
    """Gradients for every tensor, plus d loss / d spatial condition (B, C)."""
    cfg = params.config
    p = params.tensors
    B, T, D = cache["shape"]
    dy = d_out.reshape(B * T, D)
    g = {}
    h = cache["hs"][-1]
    g["out.w"] = dy.T @ h
    g["out.b"] = dy.sum(0)
    dh = dy @ p["out.w"]
    for k in reversed(range(cfg.depth)):
        a = cache["pre"][k]
        da = dh * (a > 0)
        h_in = cache["hs"][k]
        g[f"block{k}.w"] = da.T @ h_in
        g[f"block{k}.b"] = da.sum(0)
        dh = dh + da @ p[f"block{k}.w"]
    g["in.w"] = dh.T @ cache["z"]
    g["in.b"] = dh.sum(0)
    dz = (dh @ p["in.w"]).reshape(B, T, cfg.input_dim)
    c0 = cfg.pose_dim + cfg.time_dim + cfg.frame_dim
    C = cfg.cond_dim
    dc = dz[:, :, c0:].sum(1)  # (B, 4C)
    conds = cache["conds"]
    keep = ~conds.drop
    d_text = dc[:, 0:C] * keep[:, 0:1]
    d_mask = dc[:, C:2 * C] * keep[:, 1:2]
    d_instr = dc[:, 2 * C:3 * C] * keep[:, 2:3]
    d_spatial = dc[:, 3 * C:4 * C] * keep[:, 3:4]
    g["text_proj.w"] = d_text.T @ conds.text
    g["text_proj.b"] = d_text.sum(0)
    g["mask_proj.w"] = d_mask.T @ conds.mask
    g["mask_proj.b"] = d_mask.sum(0)
    g["instr_proj.w"] = d_instr.T @ conds.instruction
    g["instr_proj.b"] = d_instr.sum(0)
    return DenoiserParams(cfg, g), d_spatial


@dataclass
class Batch:
    x0: np.ndarray       # (B, T, D)
    x_t: np.ndarray      # (B, T, D)
    t: np.ndarray        # (B,)
    conds: ConditionBundle
    loss_mask: np.ndarray | None = field(default=None)  # (B, D), stage 1 only


def stage1_loss(params: DenoiserParams, batch: Batch):
    """Squared error of the clean-motion prediction.

    Averaged over every entry, or over the entries selected by
    ``batch.loss_mask`` when present. Returns ``(loss, grads, d_spatial)``.
    """
    y, cache = forward(params, batch.x_t, batch.t, batch.conds)
    diff = y - batch.x0
    if batch.loss_mask is None:
        w = np.ones_like(diff)
    else:
        w = np.broadcast_to(batch.loss_mask[:, None, :], diff.shape)
    denom = max(w.sum(), 1.0)
    loss = float((w * diff**2).sum() / denom)
    grads, d_sp = backward(params, cache, 2.0 * w * diff / denom)
    return loss, grads, d_sp


def stage2_loss(params: DenoiserParams, batch: Batch, x_inter: np.ndarray, mask: np.ndarray):
    """Squared error after overwriting masked dims with ``x_inter``.

    ``mask`` is (B, D) or (D,). Gradients reaching masked output entries are
    exactly zero. Returns ``(loss, grads, d_spatial)``.
    """
    y, cache = forward(params, batch.x_t, batch.t, batch.conds)
    if x_inter.shape != y.shape:
        raise ValueError(f"x_inter shape {x_inter.shape} != {y.shape}")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim == 1:
        mask = np.broadcast_to(mask, (y.shape[0], mask.shape[0]))
    if mask.shape != (y.shape[0], y.shape[2]):
        raise ValueError(f"mask shape {mask.shape} incompatible with {y.shape}")
    keep = np.broadcast_to((mask == 0)[:, None, :], y.shape)
    composed = np.where(keep, y, x_inter)
    diff = composed - batch.x0
    n = diff.size
    loss = float((diff**2).sum() / n)
    d_out = np.where(keep, 2.0 * diff / n, 0.0)
    grads, d_sp = backward(params, cache, d_out)
    return loss, grads, d_sp
