"""Decoupled two-stage generation.

Stage 1 samples the whole pose vector conditioned on the caption, the
interactive-part mask and the interaction phrase; only its masked dims are
kept. Stage 2 samples the full body conditioned on the caption, the
complementary mask, the leftover (non-interaction) text and a Part-GCN
spatial feature of the stage-1 motion, and overwrites the masked dims with
the stage-1 result after every denoising step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .denoiser import ConditionBundle, DenoiserParams, predict_x0
from .diffusion import DiffusionSchedule, cfg_combine, compose_overwrite, make_rng, sample_loop
from .encoders import HashedTextEncoder, TextEncoder
from .motion import MotionSequence, PartMask, PoseLayout, Skeleton, part_mask
from .part_gcn import AdjacencySubsets, GcnParams, build_adjacency_subsets, spatial_condition
from .semantics import Extractor, InteractionSpec, LlmTranscript, fallback_extractor

log = logging.getLogger(__name__)

DEFAULT_GUIDANCE = 2.5

# (x_t (B,T,D), t, conds) -> x0_hat (B,T,D)
DenoiseFn = Callable[[np.ndarray, int, ConditionBundle], np.ndarray]


@dataclass
class PipelineModel:
    layout: PoseLayout
    skeleton: Skeleton
    schedule: DiffusionSchedule
    stage1: DenoiserParams | DenoiseFn | None
    stage2: DenoiserParams | DenoiseFn | None
    gcn: GcnParams | None
    encoder: TextEncoder = field(default_factory=HashedTextEncoder)
    fps: float = 20.0
    subsets: AdjacencySubsets | None = None

    def __post_init__(self):
        if self.subsets is None:
            self.subsets = build_adjacency_subsets(self.skeleton)


@dataclass
class GenerationRequest:
    text: str
    seed: int = 0
    frames: int = 16
    guidance_scale: float = DEFAULT_GUIDANCE
    stage2_guidance_scale: float | None = None   # None: same as guidance_scale
    use_stage1: bool = True
    use_stage2: bool = True
    stochastic: bool = True

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError("frames must be >= 1")

    @property
    def spatial_scale(self) -> float:
        return self.guidance_scale if self.stage2_guidance_scale is None else self.stage2_guidance_scale


@dataclass
class GenerationTrace:
    request: GenerationRequest
    spec: InteractionSpec
    transcripts: list[LlmTranscript]
    mask: PartMask
    stage1_output: np.ndarray | None
    x_inter: np.ndarray | None
    spatial_feature: np.ndarray | None
    final: MotionSequence
    steps: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "text": self.request.text,
            "seed": self.request.seed,
            "frames": self.request.frames,
            "guidance_scale": self.request.guidance_scale,
            "stage2_guidance_scale": self.request.spatial_scale,
            "spec": self.spec.to_dict(),
            "transcripts": [t.to_record(self.request.text) for t in self.transcripts],
            "mask_parts": sorted(self.mask.parts),
            "mask_popcount": self.mask.popcount,
            "stage1_ran": self.stage1_output is not None,
            "spatial_feature": None if self.spatial_feature is None else self.spatial_feature.tolist(),
            "steps": self.steps,
        }


def _denoise_fn(params) -> DenoiseFn:
    if params is None:
        raise ValueError("missing denoiser parameters")
    if isinstance(params, DenoiserParams):
        return lambda x, t, c: predict_x0(params, x, t, c)
    return params


def guided_predictor(denoise: DenoiseFn, conds: ConditionBundle, scale: float):
    uncond = conds.dropped()

    def predict(x: np.ndarray, t: int) -> np.ndarray:
        cond = denoise(x[None], t, conds)[0]
        if scale == 1.0:
            return cond
        return cfg_combine(denoise(x[None], t, uncond)[0], cond, scale)

    return predict


def stage1_conditions(model: PipelineModel, text: str, spec: InteractionSpec, mask: PartMask) -> ConditionBundle:
    enc = model.encoder
    return ConditionBundle(enc(text)[None], mask.bits[None], enc(spec.instruction_text)[None])


def stage2_conditions(model: PipelineModel, text: str, spec: InteractionSpec, mask: PartMask,
                      spatial: np.ndarray | None) -> ConditionBundle:
    enc = model.encoder
    return ConditionBundle(enc(text)[None], (1.0 - mask.bits)[None], enc(spec.residual_text)[None],
                           None if spatial is None else spatial[None])


def _diagnostics(steps: list[dict], stage: str):
    def record(t: int, x0_hat: np.ndarray) -> None:
        steps.append({"stage": stage, "t": int(t), "x0_rms": float(np.sqrt(np.mean(x0_hat**2)))})
    return record


def stage1_generate(model: PipelineModel, text: str, spec: InteractionSpec, seed: int, frames: int,
                    guidance_scale: float = DEFAULT_GUIDANCE, stochastic: bool = True,
                    steps: list[dict] | None = None) -> np.ndarray:
    """Full-width stage-1 sample; callers keep only the masked dims."""
    if spec.is_none:
        raise ValueError("stage 1 needs at least one interactive part")
    mask = part_mask(spec.parts, model.layout, model.skeleton)
    conds = stage1_conditions(model, text, spec, mask)
    predict = guided_predictor(_denoise_fn(model.stage1), conds, guidance_scale)
    return sample_loop(predict, (frames, model.layout.total_dim), model.schedule, make_rng(seed, 1),
                       stochastic=stochastic,
                       on_step=None if steps is None else _diagnostics(steps, "stage1"))


def spatial_feature_of(model: PipelineModel, x_inter: np.ndarray) -> np.ndarray:
    if model.gcn is None:
        raise ValueError("missing Part-GCN parameters")
    return spatial_condition(model.gcn, model.subsets, x_inter[None], model.layout)[0]


def stage2_generate(model: PipelineModel, text: str, spec: InteractionSpec, x_inter: np.ndarray | None,
                    mask: PartMask, seed: int, frames: int, guidance_scale: float = DEFAULT_GUIDANCE,
                    stochastic: bool = True, steps: list[dict] | None = None):
    """Returns ``(final, spatial_feature)``; masked dims of ``final`` equal ``x_inter``."""
    D = model.layout.total_dim
    if mask.bits.shape != (D,):
        raise ValueError("mask does not match the layout")
    has_inter = mask.popcount > 0
    spatial = None
    if has_inter:
        if x_inter is None or x_inter.shape != (frames, D):
            raise ValueError(f"x_inter must be ({frames}, {D})")
        x_inter = np.where(mask.bits.astype(bool), x_inter, 0.0)
        spatial = spatial_feature_of(model, x_inter)
    conds = stage2_conditions(model, text, spec, mask, spatial)
    predict = guided_predictor(_denoise_fn(model.stage2), conds, guidance_scale)
    final = sample_loop(predict, (frames, D), model.schedule, make_rng(seed, 2), stochastic=stochastic,
                        x_inter=x_inter if has_inter else None, mask=mask.bits if has_inter else None,
                        on_step=None if steps is None else _diagnostics(steps, "stage2"))
    return final, spatial


def generate(request: GenerationRequest, model: PipelineModel,
             extractor: Extractor = fallback_extractor) -> GenerationTrace:
    spec, transcripts = extractor(request.text)
    steps: list[dict] = []
    mask = part_mask(spec.parts, model.layout, model.skeleton)
    stage1_out = x_inter = None
    if not spec.is_none and request.use_stage1:
        stage1_out = stage1_generate(model, request.text, spec, request.seed, request.frames,
                                     request.guidance_scale, request.stochastic, steps)
        x_inter = np.where(mask.bits.astype(bool), stage1_out, 0.0)
    else:
        mask = part_mask((), model.layout, model.skeleton)
    if request.use_stage2:
        final, spatial = stage2_generate(model, request.text, spec, x_inter, mask, request.seed,
                                         request.frames, request.spatial_scale, request.stochastic, steps)
    else:
        final, spatial = (x_inter if x_inter is not None else np.zeros((request.frames, model.layout.total_dim))), None
    log.debug("generated %r: parts=%s", request.text, sorted(spec.parts))
    return GenerationTrace(request, spec, transcripts, mask, stage1_out, x_inter, spatial,
                           MotionSequence(final, model.layout, model.fps), steps)


def sample_unconditional(params: DenoiserParams | DenoiseFn, model: PipelineModel, seed: int,
                         frames: int, stochastic: bool = True) -> np.ndarray:
    """Baseline sampler: every condition dropped, no guidance."""
    D = model.layout.total_dim
    e = np.zeros((1, model.encoder.dim))
    conds = ConditionBundle(e, np.zeros((1, D)), e).dropped()
    predict = guided_predictor(_denoise_fn(params), conds, 1.0)
    return sample_loop(predict, (frames, D), model.schedule, make_rng(seed, 3), stochastic=stochastic)
