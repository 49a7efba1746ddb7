"""Part-aware text-to-motion diffusion with interaction-semantics extraction."""
from .motion import PART_NAMES, MotionSequence, PartMask, PoseLayout, Skeleton, canonical_layout, canonical_skeleton, part_mask
from .pipeline import GenerationRequest, GenerationTrace, PipelineModel, generate
from .semantics import InteractionSpec, extract_with_retry, fallback_extractor

__version__ = "0.1.0"

__all__ = [
    "PART_NAMES", "MotionSequence", "PartMask", "PoseLayout", "Skeleton", "canonical_layout",
    "canonical_skeleton", "part_mask", "GenerationRequest", "GenerationTrace", "PipelineModel",
    "generate", "InteractionSpec", "extract_with_retry", "fallback_extractor",
]
