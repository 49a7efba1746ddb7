"""Procedural part-labelled motions for desk-scale training and evaluation.

Each recipe moves the joints of one body part along a smooth periodic
trajectory around a rest pose; every other dimension only carries small
Gaussian noise. Captions are built from per-recipe verb phrases and the
interaction labels are read back from the caption with the lexicon
extractor, so extraction at sampling time agrees with training labels.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .motion import MotionSequence, PoseLayout, canonical_layout, save_motion
from .semantics import InteractionSpec, fallback_rule_extractor

ROOT_HEIGHT = 0.93

# approximate SMPL rest pose, root-relative, metres, y up, +x = left
REST_POSITIONS = np.array([
    [0.0, 0.0, 0.0],
    [0.06, -0.09, 0.0], [-0.06, -0.09, 0.0], [0.0, 0.11, -0.02],
    [0.10, -0.47, 0.0], [-0.10, -0.47, 0.0], [0.0, 0.25, 0.0],
    [0.09, -0.87, -0.04], [-0.09, -0.87, -0.04], [0.0, 0.31, 0.02],
    [0.11, -0.93, 0.08], [-0.11, -0.93, 0.08], [0.0, 0.52, 0.0],
    [0.08, 0.43, 0.0], [-0.08, 0.43, 0.0], [0.0, 0.61, 0.05],
    [0.18, 0.44, 0.0], [-0.18, 0.44, 0.0], [0.43, 0.43, -0.02],
    [-0.43, 0.43, -0.02], [0.68, 0.44, 0.0], [-0.68, 0.44, 0.0],
])

# joints of each moving chain, proximal to distal, with displacement weights
CHAINS = {
    "left arm": ((13, 16, 18, 20), (0.2, 0.5, 0.8, 1.0)),
    "right arm": ((14, 17, 19, 21), (0.2, 0.5, 0.8, 1.0)),
    "left leg": ((1, 4, 7, 10), (0.1, 0.4, 0.8, 1.0)),
    "right leg": ((2, 5, 8, 11), (0.1, 0.4, 0.8, 1.0)),
    "torso": ((3, 6, 9, 12, 15), (0.2, 0.4, 0.6, 0.8, 1.0)),
}

SUBJECTS = ("a person", "someone", "a man", "a woman")


@dataclass(frozen=True)
class SynthRecipe:
    name: str
    kind: str                     # wave | kick | bend | walk | stand
    part: str                     # canonical part or "none"
    phrases: tuple[str, ...]
    amplitude: float = 0.3
    frequency: float = 1.25       # Hz, periodic kinds only
    base_pose: str = "rest"
    frames: int = 16
    noise: float = 0.002
    rot_amplitude: float = 0.8    # radians at the distal joint

    def __post_init__(self):
        if self.part != "none" and self.part not in CHAINS:
            raise ValueError(f"unsupported active part {self.part!r}")
        if self.amplitude <= self.noise and self.kind != "stand":
            raise ValueError("amplitude must exceed the noise level")
        if len(self.phrases) < 3:
            raise ValueError("need at least three caption phrasings")

    @property
    def active_parts(self) -> frozenset[str]:
        return frozenset() if self.part == "none" else frozenset([self.part])

    def captions(self) -> list[str]:
        return [f"{SUBJECTS[i % len(SUBJECTS)]} {p}" for i, p in enumerate(self.phrases)]


def _side(part: str) -> str:
    return part.split()[0]


DEFAULT_RECIPES = (
    SynthRecipe("wave_left_arm", "wave", "left arm", (
        "waves the left hand",
        "waves their left arm in the air",
        "is standing and waves with the left hand",
    )),
    SynthRecipe("wave_right_arm", "wave", "right arm", (
        "waves the right hand",
        "waves their right arm in the air",
        "is standing and waves with the right hand",
    )),
    SynthRecipe("kick_left_leg", "kick", "left leg", (
        "kicks a ball with the left leg",
        "kicks forward with the left foot",
        "stands still and kicks with their left leg",
    ), amplitude=0.35),
    SynthRecipe("kick_right_leg", "kick", "right leg", (
        "kicks a ball with the right leg",
        "kicks forward with the right foot",
        "stands still and kicks with their right leg",
    ), amplitude=0.35),
    SynthRecipe("walk_in_place", "walk", "none", (
        "walks in place",
        "marches on the spot",
        "steps in place slowly",
    ), amplitude=0.12),
    SynthRecipe("stand", "stand", "none", (
        "stands still",
        "is standing idle",
        "waits without moving",
    ), amplitude=0.01),
)

TORSO_BEND = SynthRecipe("torso_bend", "bend", "torso", (
    "bends the torso forward to pick up a box",
    "leans the upper body forward",
    "bends over at the waist",
), amplitude=0.25)

RECIPES = {r.name: r for r in DEFAULT_RECIPES + (TORSO_BEND,)}


@dataclass(frozen=True)
class CombinedRecipe:
    """Two recipes played together ("spatial") or one after the other ("temporal")."""
    first: SynthRecipe
    second: SynthRecipe
    mode: str = "spatial"

    def __post_init__(self):
        if self.mode not in ("spatial", "temporal"):
            raise ValueError("mode must be 'spatial' or 'temporal'")
        if self.mode == "spatial" and self.first.active_parts & self.second.active_parts:
            raise ValueError("spatial combination needs disjoint parts")

    @property
    def name(self) -> str:
        return f"{self.first.name}+{self.second.name}:{self.mode}"

    @property
    def frames(self) -> int:
        return self.first.frames

    @property
    def active_parts(self) -> frozenset[str]:
        return self.first.active_parts | self.second.active_parts

    def captions(self) -> list[str]:
        joiner = " and " if self.mode == "spatial" else ", then "
        n = min(len(self.first.phrases), len(self.second.phrases))
        return [f"{SUBJECTS[i % len(SUBJECTS)]} {self.first.phrases[i]}{joiner}{self.second.phrases[i]}"
                for i in range(n)]


def _rot6d(angle: np.ndarray, axis: str) -> np.ndarray:
    """First two columns of the rotation about ``axis``, flattened column-wise."""
    c, s = np.cos(angle), np.sin(angle)
    z, o = np.zeros_like(angle), np.ones_like(angle)
    if axis == "x":
        cols = (o, z, z, z, c, s)
    elif axis == "z":
        cols = (c, s, z, -s, c, z)
    else:
        raise ValueError(axis)
    return np.stack(cols, axis=-1)


def _signal(kind: str, n: int, frames: int, fps: float, freq: float, phase: float) -> np.ndarray:
    k = np.arange(n, dtype=np.float64)
    if kind in ("wave", "walk"):
        return np.sin(2 * np.pi * freq * k / fps + phase)
    if kind in ("kick", "bend"):
        return np.sin(np.pi * k / max(frames - 1, 1) + phase) ** 2
    return np.zeros(n)


def _part_trajectory(recipe: SynthRecipe, n: int, fps: float, amp: float, phase: float):
    """Per-frame displacement (n, J, 3) and rotation angle (n, J) for the active chain(s)."""
    disp = np.zeros((n, 22, 3))
    angle = np.zeros((n, 22))
    axis = "x"
    sig = _signal(recipe.kind, n, recipe.frames, fps, recipe.frequency, phase)
    if recipe.kind == "wave":
        side = 1.0 if _side(recipe.part) == "left" else -1.0
        direction = np.array([0.25 * side, 1.0, 0.3])
        axis = "z"
        targets = [(recipe.part, sig)]
    elif recipe.kind == "kick":
        direction = np.array([0.0, 0.6, 1.0])
        targets = [(recipe.part, sig)]
    elif recipe.kind == "bend":
        direction = np.array([0.0, -0.4, 1.0])
        targets = [(recipe.part, sig)]
    elif recipe.kind == "walk":
        direction = np.array([0.0, 1.0, 0.5])
        targets = [("left leg", np.maximum(sig, 0.0)), ("right leg", np.maximum(-sig, 0.0))]
    else:
        return disp, angle, axis
    for part, s in targets:
        joints, weights = CHAINS[part]
        for j, w in zip(joints, weights):
            disp[:, j, :] = (w * amp * s)[:, None] * direction[None, :]
            angle[:, j] = w * recipe.rot_amplitude * (amp / max(recipe.amplitude, 1e-9)) * s
    return disp, angle, axis


def _assemble(layout: PoseLayout, rel_pos: np.ndarray, rot6: np.ndarray, height: np.ndarray) -> np.ndarray:
    """Pose rows from n+1 frames of kinematics; velocities are forward differences."""
    n1 = rel_pos.shape[0]
    T = n1 - 1
    J = layout.num_joints
    rows = np.zeros((T, layout.total_dim))
    rows[:, 3] = height[:T]
    rows[:, layout.group("joint_positions")] = rel_pos[:T, 1:].reshape(T, 3 * (J - 1))
    vel = np.diff(rel_pos, axis=0)            # (T, J, 3)
    vel[:, 0, :] = 0.0
    vel[:, 0, 1] = np.diff(height)
    rows[:, layout.group("joint_velocities")] = vel.reshape(T, 3 * J)
    rows[:, layout.group("joint_rotations")] = rot6[:T, 1:].reshape(T, 6 * (J - 1))
    for j in layout.contact_joints:
        lift = (height[:T] + rel_pos[:T, j, 1]) - (ROOT_HEIGHT + REST_POSITIONS[j, 1])
        rows[:, layout.contact_dim(j)] = (lift < 0.03).astype(np.float64)
    return rows


def _kinematics(recipe: SynthRecipe, n: int, fps: float, rng: np.random.Generator):
    amp = recipe.amplitude * rng.uniform(0.9, 1.1)
    phase = rng.uniform(-0.2, 0.2)
    disp, angle, axis = _part_trajectory(recipe, n, fps, amp, phase)
    height = np.full(n, ROOT_HEIGHT)
    if recipe.kind == "walk":
        height = height + 0.02 * np.abs(np.sin(2 * np.pi * recipe.frequency * np.arange(n) / fps + phase))
    return disp, angle, axis, height


def synth_motion(recipe: SynthRecipe | CombinedRecipe, seed: int, fps: float = 20.0,
                 layout: PoseLayout | None = None) -> tuple[MotionSequence, str, InteractionSpec]:
    layout = layout or canonical_layout()
    if layout.num_joints != 22:
        raise ValueError("synthetic recipes are defined on the 22-joint skeleton")
    rng = np.random.default_rng(seed)
    T = recipe.frames
    n = T + 1
    if isinstance(recipe, CombinedRecipe):
        d1, a1, ax1, h1 = _kinematics(recipe.first, n, fps, rng)
        d2, a2, ax2, h2 = _kinematics(recipe.second, n, fps, rng)
        if recipe.mode == "spatial":
            disp, angle, height = d1 + d2, a1 + a2, h1 + h2 - ROOT_HEIGHT
            axes = {ax1, ax2}
        else:
            half = n // 2
            disp = np.concatenate([d1[:half], d2[:n - half]])
            angle = np.concatenate([a1[:half], a2[:n - half]])
            height = np.concatenate([h1[:half], h2[:n - half]])
            axes = {ax1, ax2}
        axis = "z" if axes == {"z"} else "x"
        noise = recipe.first.noise
    else:
        disp, angle, axis, height = _kinematics(recipe, n, fps, rng)
        noise = recipe.noise
    rel = REST_POSITIONS[None, :, :] + disp + rng.normal(0.0, noise, (n, 22, 3))
    rel[:, 0, :] = 0.0
    rot6 = _rot6d(angle, axis) + rng.normal(0.0, noise, (n, 22, 6))
    height = height + rng.normal(0.0, noise, n)
    frames = _assemble(layout, rel, rot6, height)
    captions = recipe.captions()
    caption = captions[int(rng.integers(len(captions)))]
    spec = fallback_rule_extractor(caption)
    if spec.parts != recipe.active_parts:
        raise ValueError(f"caption {caption!r} extracts {sorted(spec.parts)}, "
                         f"recipe moves {sorted(recipe.active_parts)}")
    return MotionSequence(frames, layout, fps), caption, spec


@dataclass
class ManifestRecord:
    id: str
    path: str
    caption: str
    recipe: str
    spec: InteractionSpec
    split: str
    seed: int

    def to_dict(self) -> dict:
        return {
            "id": self.id, "path": self.path, "caption": self.caption, "recipe": self.recipe,
            "pairs": self.spec.to_dict()["pairs"], "residual_text": self.spec.residual_text,
            "split": self.split, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestRecord":
        spec = InteractionSpec.from_dict({"pairs": d["pairs"], "residual_text": d["residual_text"]})
        return cls(d["id"], d["path"], d["caption"], d["recipe"], spec, d["split"], int(d["seed"]))


def record_seed(seed: int, recipe_index: int, item: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(recipe_index, item))
    return int(ss.generate_state(1)[0])


def build_dataset(recipes: Sequence[SynthRecipe | CombinedRecipe], count: int, seed: int,
                  out_dir, frames: int | None = None, test_fraction: float = 0.2,
                  fps: float = 20.0) -> list[ManifestRecord]:
    """Write ``motions/*.json`` and ``manifest.jsonl`` under ``out_dir``.

    Splits are stratified per recipe and fixed by ``seed``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    out = Path(out_dir)
    (out / "motions").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for ri, recipe in enumerate(recipes):
        if frames is not None:
            recipe = _with_frames(recipe, frames)
        n_test = int(round(count * test_fraction))
        test_items = set(rng.permutation(count)[:n_test].tolist())
        for i in range(count):
            rseed = record_seed(seed, ri, i)
            motion, caption, spec = synth_motion(recipe, rseed, fps=fps)
            rid = f"{recipe.name.replace(':', '_').replace('+', '_')}_{i:04d}"
            rel = f"motions/{rid}.json"
            save_motion(motion, out / rel)
            records.append(ManifestRecord(rid, rel, caption, recipe.name, spec,
                                          "test" if i in test_items else "train", rseed))
    write_manifest(records, out / "manifest.jsonl")
    return records


def _with_frames(recipe, frames: int):
    if isinstance(recipe, CombinedRecipe):
        return CombinedRecipe(replace(recipe.first, frames=frames), replace(recipe.second, frames=frames),
                              recipe.mode)
    return replace(recipe, frames=frames)


def write_manifest(records: Sequence[ManifestRecord], path) -> None:
    Path(path).write_text("".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records))


def load_manifest(path) -> list[ManifestRecord]:
    lines = Path(path).read_text().splitlines()
    return [ManifestRecord.from_dict(json.loads(ln)) for ln in lines if ln.strip()]
