"""Checkpoint container: a JSON header plus named little-endian float64 tensors.

Keys are sorted and tensors are stored as base64 of their raw bytes, so the
same parameters always serialize to the same file.
"""
from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .denoiser import DenoiserConfig, DenoiserParams
from .diffusion import schedule_from_betas
from .motion import PoseLayout, build_layout, canonical_skeleton
from .part_gcn import GcnConfig, GcnParams
from .pipeline import PipelineModel
from .training import TrainConfig

CHECKPOINT_FORMAT = "partmotion.checkpoint/1"
DTYPE = "<f8"


class CheckpointError(ValueError):
    pass


def encode_tensor(a: np.ndarray) -> dict:
    a = np.array(a, dtype=DTYPE, order="C")    # ascontiguousarray would promote 0-d to 1-d
    return {"shape": list(a.shape), "dtype": DTYPE, "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_tensor(doc: dict) -> np.ndarray:
    if doc.get("dtype") != DTYPE:
        raise CheckpointError(f"unsupported dtype {doc.get('dtype')!r}")
    raw = base64.b64decode(doc["data"])
    shape = tuple(doc["shape"])
    a = np.frombuffer(raw, dtype=DTYPE)
    if a.size != int(np.prod(shape)):
        raise CheckpointError(f"tensor payload does not match shape {shape}")
    return a.reshape(shape).astype(np.float64)


def save_tensors(path, header: dict, groups: dict[str, dict[str, np.ndarray]]) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "header": header,
        "groups": {g: {k: encode_tensor(v) for k, v in ts.items()} for g, ts in groups.items()},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_tensors(path) -> tuple[dict, dict[str, dict[str, np.ndarray]]]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: not a checkpoint ({e})") from e
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unknown format {doc.get('format')!r}")
    groups = {g: {k: decode_tensor(v) for k, v in ts.items()} for g, ts in doc["groups"].items()}
    return doc["header"], groups


@dataclass
class PipelineCheckpoint:
    config: TrainConfig
    layout: PoseLayout
    betas: np.ndarray
    stage1: DenoiserParams
    stage2: DenoiserParams
    gcn: GcnParams
    baseline: DenoiserParams | None = None
    fps: float = 20.0

    def model(self) -> PipelineModel:
        return PipelineModel(self.layout, canonical_skeleton(), schedule_from_betas(self.betas),
                             self.stage1, self.stage2, self.gcn, fps=self.fps)


def save_pipeline(path, ckpt: PipelineCheckpoint) -> None:
    header = {
        "train_config": ckpt.config.to_dict(),
        "num_joints": ckpt.layout.num_joints,
        "contact_joints": list(ckpt.layout.contact_joints),
        "fps": ckpt.fps,
        "denoisers": {"stage1": asdict(ckpt.stage1.config), "stage2": asdict(ckpt.stage2.config)},
        "gcn": {**asdict(ckpt.gcn.config), "num_subsets": ckpt.gcn.num_subsets},
    }
    groups = {"stage1": ckpt.stage1.tensors, "stage2": ckpt.stage2.tensors, "gcn": ckpt.gcn.tensors,
              "schedule": {"betas": ckpt.betas}}
    if ckpt.baseline is not None:
        header["denoisers"]["baseline"] = asdict(ckpt.baseline.config)
        groups["baseline"] = ckpt.baseline.tensors
    save_tensors(path, header, groups)


def load_pipeline(path) -> PipelineCheckpoint:
    header, groups = load_tensors(path)
    try:
        dens = {name: DenoiserParams(DenoiserConfig(**cfg), groups[name])
                for name, cfg in header["denoisers"].items()}
        g = dict(header["gcn"])
        k = g.pop("num_subsets")
        g["hidden"] = tuple(g["hidden"])
        gcn = GcnParams(GcnConfig(**g), groups["gcn"], k)
        layout = build_layout(header["num_joints"], header["contact_joints"])
        return PipelineCheckpoint(TrainConfig.from_dict(header["train_config"]), layout,
                                  groups["schedule"]["betas"], dens["stage1"], dens["stage2"], gcn,
                                  dens.get("baseline"), float(header["fps"]))
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: incomplete checkpoint ({e})") from e
