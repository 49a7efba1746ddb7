"""Training loops for the two denoisers, the Part-GCN and the unconditional baseline."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .denoiser import (
    Batch,
    ConditionBundle,
    DenoiserConfig,
    DenoiserParams,
    init_denoiser,
    stage1_loss,
    stage2_loss,
)
from .diffusion import DiffusionSchedule, forward_sample_batch, make_rng, make_schedule, scaled_linear_betas
from .encoders import TEXT_DIM, HashedTextEncoder
from .motion import PoseLayout, Skeleton, load_motion, part_mask
from .optim import AdamState, adam_step
from .part_gcn import (
    AdjacencySubsets,
    GcnConfig,
    GcnParams,
    build_adjacency_subsets,
    gcn_backward,
    gcn_forward,
    init_gcn,
    node_features,
)
from .semantics import InteractionSpec

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 1500
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    cond_dropout: float = 0.1
    t_steps: int = 50
    beta_start: float | None = None   # None -> scaled full-scale range
    beta_end: float | None = None
    width: int = 128
    depth: int = 4
    time_dim: int = 64
    frame_dim: int = 16
    text_dim: int = TEXT_DIM
    cond_dim: int = 64
    gcn_hidden: tuple[int, ...] = (32, 32)
    gcn_conv_layers: int = 1
    guidance_scale: float = 2.5
    teacher_forcing: bool = True
    log_every: int = 100

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        d = dict(d)
        if "gcn_hidden" in d:
            d["gcn_hidden"] = tuple(d["gcn_hidden"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gcn_hidden"] = list(self.gcn_hidden)
        return d

    def schedule(self) -> DiffusionSchedule:
        lo, hi = scaled_linear_betas(self.t_steps)
        return make_schedule(self.t_steps, self.beta_start or lo, self.beta_end or hi)

    def denoiser_config(self, pose_dim: int) -> DenoiserConfig:
        return DenoiserConfig(pose_dim, self.width, self.depth, self.time_dim, self.frame_dim,
                              self.text_dim, self.cond_dim, self.t_steps)

    def gcn_config(self, num_joints: int) -> GcnConfig:
        return GcnConfig(num_joints, tuple(self.gcn_hidden), self.gcn_conv_layers, cond_dim=self.cond_dim)


@dataclass
class TrainItem:
    x0: np.ndarray              # (T, D)
    caption: str
    spec: InteractionSpec
    mask: np.ndarray            # (D,) interactive-part bits
    text_emb: np.ndarray
    instr_emb: np.ndarray
    resid_emb: np.ndarray


def make_items(motions: Sequence[np.ndarray], captions: Sequence[str], specs: Sequence[InteractionSpec],
               layout: PoseLayout, skeleton: Skeleton, encoder=None) -> list[TrainItem]:
    enc = encoder or HashedTextEncoder()
    items = []
    for x, cap, spec in zip(motions, captions, specs):
        bits = part_mask(spec.parts, layout, skeleton).bits
        items.append(TrainItem(np.asarray(x, dtype=np.float64), cap, spec, bits, enc(cap),
                               enc(spec.instruction_text), enc(spec.residual_text)))
    return items


def load_items(records, data_dir, layout: PoseLayout, skeleton: Skeleton, split: str | None = "train",
               encoder=None) -> list[TrainItem]:
    chosen = [r for r in records if split is None or r.split == split]
    motions = [load_motion(Path(data_dir) / r.path).frames for r in chosen]
    return make_items(motions, [r.caption for r in chosen], [r.spec for r in chosen], layout, skeleton, encoder)


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)


def _stack(items: Sequence[TrainItem], attr: str) -> np.ndarray:
    return np.stack([getattr(it, attr) for it in items])


def _check_lengths(items: Sequence[TrainItem]) -> None:
    lengths = {it.x0.shape for it in items}
    if len(lengths) != 1:
        raise ValueError(f"training items must share one shape, found {sorted(lengths)}")


def _drop_flags(rng: np.random.Generator, b: int, p: float) -> np.ndarray:
    drop_all = rng.random(b) < p
    return np.repeat(drop_all[:, None], 4, axis=1)


def _noised(rng, x0: np.ndarray, schedule: DiffusionSchedule):
    t = rng.integers(1, schedule.num_steps + 1, size=x0.shape[0])
    x_t, _ = forward_sample_batch(x0, t, schedule, rng)
    return x_t, t


def train_stage1(items: Sequence[TrainItem], config: TrainConfig, params: DenoiserParams | None = None,
                 on_step: Callable[[int, float], None] | None = None):
    """Fit the interactive-part denoiser; loss counts only masked dims."""
    items = [it for it in items if not it.spec.is_none]
    if not items:
        raise ValueError("empty dataset: no interactive records for stage 1")
    _check_lengths(items)
    schedule = config.schedule()
    params = params or init_denoiser(config.denoiser_config(items[0].x0.shape[1]), config.seed)
    rng = make_rng(config.seed, 11)
    opt = AdamState(lr=config.lr)
    losses = []
    for step in range(config.steps):
        idx = rng.integers(len(items), size=config.batch_size)
        batch_items = [items[i] for i in idx]
        x0 = _stack(batch_items, "x0")
        x_t, t = _noised(rng, x0, schedule)
        conds = ConditionBundle(_stack(batch_items, "text_emb"), _stack(batch_items, "mask"),
                                _stack(batch_items, "instr_emb"), None)
        drop = _drop_flags(rng, len(idx), config.cond_dropout)
        drop[:, 3] = True
        conds.drop = drop
        loss, grads, _ = stage1_loss(params, Batch(x0, x_t, t, conds, _stack(batch_items, "mask")))
        params = DenoiserParams(params.config, adam_step(opt, params.tensors, grads.tensors))
        losses.append(loss)
        if on_step:
            on_step(step, loss)
        if config.log_every and step % config.log_every == 0:
            log.info("stage1 step %d loss %.5f", step, loss)
    return params, losses


def stage2_objective(params: DenoiserParams, gcn: GcnParams, subsets: AdjacencySubsets, layout: PoseLayout,
                     x0: np.ndarray, x_t: np.ndarray, t: np.ndarray, conds: ConditionBundle,
                     x_inter: np.ndarray, mask: np.ndarray):
    """Stage-2 loss with the spatial condition computed from ``x_inter`` by the GCN.

    ``mask`` (B, D) marks interactive dims; the denoiser sees its complement.
    Rows whose mask is empty get their spatial condition dropped.
    Returns ``(loss, denoiser grads, gcn grads)``.
    """
    feats = node_features(x_inter, layout)
    spatial, cache = gcn_forward(gcn, subsets, feats)
    drop = conds.drop.copy()
    drop[:, 3] |= mask.sum(1) == 0
    full = ConditionBundle(conds.text, 1.0 - mask, conds.instruction, spatial, drop)
    loss, grads, d_spatial = stage2_loss(params, Batch(x0, x_t, t, full), x_inter, mask)
    g_gcn = gcn_backward(gcn, subsets, cache, d_spatial)
    return loss, grads, g_gcn


def train_stage2(items: Sequence[TrainItem], config: TrainConfig, layout: PoseLayout, skeleton: Skeleton,
                 params: DenoiserParams | None = None, gcn: GcnParams | None = None,
                 x_inter_source: Sequence[np.ndarray] | None = None,
                 on_step: Callable[[int, float], None] | None = None):
    """Fit the full-body denoiser and the Part-GCN jointly.

    ``x_inter_source`` supplies per-item interactive motions (e.g. stage-1
    samples); by default the ground truth is used (teacher forcing).
    """
    items = list(items)
    if not items:
        raise ValueError("empty dataset")
    _check_lengths(items)
    schedule = config.schedule()
    params = params or init_denoiser(config.denoiser_config(items[0].x0.shape[1]), config.seed + 1)
    subsets = build_adjacency_subsets(skeleton)
    gcn = gcn or init_gcn(config.gcn_config(skeleton.num_joints), subsets.k, config.seed + 2)
    if x_inter_source is None:
        inter = [it.x0 * it.mask for it in items]
    else:
        inter = [np.asarray(x) * it.mask for x, it in zip(x_inter_source, items)]
    rng = make_rng(config.seed, 12)
    opt = AdamState(lr=config.lr)
    losses = []
    for step in range(config.steps):
        idx = rng.integers(len(items), size=config.batch_size)
        batch_items = [items[i] for i in idx]
        x0 = _stack(batch_items, "x0")
        x_inter = np.stack([inter[i] for i in idx])
        mask = _stack(batch_items, "mask")
        x_t, t = _noised(rng, x0, schedule)
        conds = ConditionBundle(_stack(batch_items, "text_emb"), 1.0 - mask, _stack(batch_items, "resid_emb"),
                                None, _drop_flags(rng, len(idx), config.cond_dropout))
        loss, g_den, g_gcn = stage2_objective(params, gcn, subsets, layout, x0, x_t, t, conds, x_inter, mask)
        flat = {"den/" + k: v for k, v in params.tensors.items()} | {"gcn/" + k: v for k, v in gcn.tensors.items()}
        grads = {"den/" + k: v for k, v in g_den.tensors.items()} | {"gcn/" + k: v for k, v in g_gcn.items()}
        new = adam_step(opt, flat, grads)
        params = DenoiserParams(params.config, {k[4:]: v for k, v in new.items() if k.startswith("den/")})
        gcn = GcnParams(gcn.config, {k[4:]: v for k, v in new.items() if k.startswith("gcn/")}, gcn.num_subsets)
        losses.append(loss)
        if on_step:
            on_step(step, loss)
        if config.log_every and step % config.log_every == 0:
            log.info("stage2 step %d loss %.5f", step, loss)
    return params, gcn, losses


def train_unconditional(items: Sequence[TrainItem], config: TrainConfig, params: DenoiserParams | None = None):
    """Single-stage baseline with every condition permanently dropped."""
    items = list(items)
    if not items:
        raise ValueError("empty dataset")
    _check_lengths(items)
    schedule = config.schedule()
    params = params or init_denoiser(config.denoiser_config(items[0].x0.shape[1]), config.seed + 3)
    rng = make_rng(config.seed, 13)
    opt = AdamState(lr=config.lr)
    losses = []
    D = items[0].x0.shape[1]
    for step in range(config.steps):
        idx = rng.integers(len(items), size=config.batch_size)
        x0 = np.stack([items[i].x0 for i in idx])
        x_t, t = _noised(rng, x0, schedule)
        b = len(idx)
        conds = ConditionBundle(np.zeros((b, config.text_dim)), np.zeros((b, D)), np.zeros((b, config.text_dim)),
                                None, np.ones((b, 4), dtype=bool))
        loss, grads, _ = stage1_loss(params, Batch(x0, x_t, t, conds))
        params = DenoiserParams(params.config, adam_step(opt, params.tensors, grads.tensors))
        losses.append(loss)
        if config.log_every and step % config.log_every == 0:
            log.info("baseline step %d loss %.5f", step, loss)
    return params, losses
