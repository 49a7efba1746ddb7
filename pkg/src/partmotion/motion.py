"""Pose-vector layout, skeleton, body-part masks and the motion file format.

A pose row is laid out as

    [root_angular_vel (1), root_linear_vel (2), root_height (1),
     joint_positions (3 * (J - 1)), joint_velocities (3 * J),
     joint_rotations (6 * (J - 1)), foot_contacts (|contacts|)]

Positions and rotations skip the root joint; velocities include it.
Note this is NOT the HumanML3D column order (positions, rotations,
velocities). Use ``reindex_from_humanml3d`` to ingest such data.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PART_NAMES = ("left arm", "right arm", "left leg", "right leg", "torso", "pelvis")
DIM_ORDER_TAG = "ra,rl,rh,pos,vel,rot,contact"
MOTION_FORMAT = "partmotion.motion/1"

GROUP_ORDER = (
    "root_angular_vel",
    "root_linear_vel",
    "root_height",
    "joint_positions",
    "joint_velocities",
    "joint_rotations",
    "foot_contacts",
)


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class PoseLayout:
    num_joints: int
    contact_joints: tuple[int, ...]
    offsets: dict[str, tuple[int, int]] = field(compare=False)
    total_dim: int

    def group(self, name: str) -> slice:
        lo, hi = self.offsets[name]
        return slice(lo, hi)

    def position_dims(self, joint: int) -> list[int]:
        if joint == 0:
            return []
        lo = self.offsets["joint_positions"][0] + 3 * (joint - 1)
        return [lo, lo + 1, lo + 2]

    def velocity_dims(self, joint: int) -> list[int]:
        lo = self.offsets["joint_velocities"][0] + 3 * joint
        return [lo, lo + 1, lo + 2]

    def rotation_dims(self, joint: int) -> list[int]:
        if joint == 0:
            return []
        lo = self.offsets["joint_rotations"][0] + 6 * (joint - 1)
        return list(range(lo, lo + 6))

    def contact_dim(self, joint: int) -> int:
        return self.offsets["foot_contacts"][0] + self.contact_joints.index(joint)

    def joint_dims(self, joint: int) -> list[int]:
        """Position, velocity and rotation dims owned by ``joint``."""
        return self.position_dims(joint) + self.velocity_dims(joint) + self.rotation_dims(joint)


def build_layout(num_joints: int, contact_joints: Sequence[int]) -> PoseLayout:
    if num_joints < 2:
        raise LayoutError(f"need at least 2 joints, got {num_joints}")
    contacts = tuple(int(j) for j in contact_joints)
    for j in contacts:
        if not 0 <= j < num_joints:
            raise LayoutError(f"contact joint {j} outside [0, {num_joints})")
    if len(set(contacts)) != len(contacts):
        raise LayoutError("duplicate contact joints")
    sizes = {
        "root_angular_vel": 1,
        "root_linear_vel": 2,
        "root_height": 1,
        "joint_positions": 3 * (num_joints - 1),
        "joint_velocities": 3 * num_joints,
        "joint_rotations": 6 * (num_joints - 1),
        "foot_contacts": len(contacts),
    }
    offsets = {}
    cursor = 0
    for name in GROUP_ORDER:
        offsets[name] = (cursor, cursor + sizes[name])
        cursor += sizes[name]
    return PoseLayout(num_joints, contacts, offsets, cursor)


@dataclass(frozen=True)
class Skeleton:
    names: tuple[str, ...]
    parents: tuple[int, ...]
    parts: tuple[str, ...]  # part name per joint

    def __post_init__(self):
        n = len(self.names)
        if len(self.parents) != n or len(self.parts) != n:
            raise ValueError("names, parents and parts must have equal length")
        roots = [j for j, p in enumerate(self.parents) if p < 0]
        if roots != [0]:
            raise ValueError("skeleton must have joint 0 as its single root")
        for j in range(1, n):
            seen = set()
            k = j
            while k != 0:
                if k in seen or not 0 <= self.parents[k] < n:
                    raise ValueError(f"parent table is not a tree at joint {j}")
                seen.add(k)
                k = self.parents[k]
        for p in self.parts:
            if p not in PART_NAMES:
                raise ValueError(f"unknown part {p!r}")

    @property
    def num_joints(self) -> int:
        return len(self.names)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(p, j) for j, p in enumerate(self.parents) if p >= 0]

    def joints_of(self, part: str) -> list[int]:
        return [j for j, p in enumerate(self.parts) if p == part]


SMPL_JOINTS = (
    ("pelvis", -1, "pelvis"),
    ("left_hip", 0, "left leg"),
    ("right_hip", 0, "right leg"),
    ("spine1", 0, "torso"),
    ("left_knee", 1, "left leg"),
    ("right_knee", 2, "right leg"),
    ("spine2", 3, "torso"),
    ("left_ankle", 4, "left leg"),
    ("right_ankle", 5, "right leg"),
    ("spine3", 6, "torso"),
    ("left_foot", 7, "left leg"),
    ("right_foot", 8, "right leg"),
    ("neck", 9, "torso"),
    ("left_collar", 9, "left arm"),
    ("right_collar", 9, "right arm"),
    ("head", 12, "torso"),
    ("left_shoulder", 13, "left arm"),
    ("right_shoulder", 14, "right arm"),
    ("left_elbow", 16, "left arm"),
    ("right_elbow", 17, "right arm"),
    ("left_wrist", 18, "left arm"),
    ("right_wrist", 19, "right arm"),
)
SMPL_CONTACTS = (7, 10, 8, 11)
HAND_JOINTS = (20, 21)
FOOT_JOINTS = (7, 8, 10, 11)


def canonical_skeleton() -> Skeleton:
    names, parents, parts = zip(*SMPL_JOINTS)
    return Skeleton(tuple(names), tuple(parents), tuple(parts))


def canonical_layout() -> PoseLayout:
    return build_layout(22, SMPL_CONTACTS)


def check_compatible(layout: PoseLayout, skeleton: Skeleton) -> None:
    if layout.num_joints != skeleton.num_joints:
        raise LayoutError(
            f"layout has {layout.num_joints} joints, skeleton has {skeleton.num_joints}"
        )


@dataclass(frozen=True)
class PartMask:
    bits: np.ndarray
    parts: frozenset[str]

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    def complement(self) -> "PartMask":
        return PartMask(1.0 - self.bits, frozenset(PART_NAMES) - self.parts)


def part_mask(parts: Iterable[str], layout: PoseLayout, skeleton: Skeleton) -> PartMask:
    parts = frozenset(parts)
    unknown = parts - set(PART_NAMES)
    if unknown:
        raise ValueError(f"unknown part name(s): {sorted(unknown)}")
    check_compatible(layout, skeleton)
    bits = np.zeros(layout.total_dim)
    for j in range(layout.num_joints):
        if skeleton.parts[j] in parts:
            bits[layout.joint_dims(j)] = 1.0
    if "pelvis" in parts:
        bits[0:4] = 1.0
    for j in layout.contact_joints:
        if skeleton.parts[j] in parts:
            bits[layout.contact_dim(j)] = 1.0
    return PartMask(bits, parts)


@dataclass
class MotionSequence:
    frames: np.ndarray
    layout: PoseLayout
    fps: float = 20.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise LayoutError(f"frames must be a non-empty T x D matrix, got {self.frames.shape}")
        if self.frames.shape[1] != self.layout.total_dim:
            raise LayoutError(
                f"row width {self.frames.shape[1]} != layout dim {self.layout.total_dim}"
            )

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def _mask_bits(m) -> np.ndarray:
    return m.bits if isinstance(m, PartMask) else np.asarray(m)


def gather_masked(x, m) -> np.ndarray:
    """Columns of ``x`` whose mask bit is set, in ascending dimension order."""
    frames = x.frames if isinstance(x, MotionSequence) else np.asarray(x)
    bits = _mask_bits(m)
    if bits.shape[-1] != frames.shape[-1]:
        raise LayoutError(f"mask length {bits.shape[-1]} != row width {frames.shape[-1]}")
    return frames[..., bits.astype(bool)]


def scatter_masked(values: np.ndarray, m, total_dim: int | None = None) -> np.ndarray:
    """Inverse of ``gather_masked``: place compact columns back at mask dims, zeros elsewhere."""
    bits = _mask_bits(m).astype(bool)
    if total_dim is not None and bits.shape[0] != total_dim:
        raise LayoutError("mask length does not match total_dim")
    if values.shape[-1] != bits.sum():
        raise LayoutError(f"{values.shape[-1]} columns for a mask with {bits.sum()} set bits")
    out = np.zeros(values.shape[:-1] + (bits.shape[0],))
    out[..., bits] = values
    return out


def reindex_from_humanml3d(frames: np.ndarray, layout: PoseLayout) -> np.ndarray:
    """Reorder rows stored as [root, pos, rot, vel, contact] into this package's order."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[-1] != layout.total_dim:
        raise LayoutError("row width does not match layout")
    n = layout.num_joints
    pos, rot, vel = 3 * (n - 1), 6 * (n - 1), 3 * n
    root = frames[..., :4]
    p = frames[..., 4 : 4 + pos]
    r = frames[..., 4 + pos : 4 + pos + rot]
    v = frames[..., 4 + pos + rot : 4 + pos + rot + vel]
    c = frames[..., 4 + pos + rot + vel :]
    return np.concatenate([root, p, v, r, c], axis=-1)


def motion_to_dict(motion: MotionSequence) -> dict:
    return {
        "format": MOTION_FORMAT,
        "num_joints": motion.layout.num_joints,
        "contact_joints": list(motion.layout.contact_joints),
        "fps": motion.fps,
        "dim_order": DIM_ORDER_TAG,
        "num_frames": motion.num_frames,
        "frames": motion.frames.tolist(),
    }


def motion_from_dict(doc: dict) -> MotionSequence:
    if doc.get("format") != MOTION_FORMAT:
        raise LayoutError(f"not a motion file (format={doc.get('format')!r})")
    if doc.get("dim_order") != DIM_ORDER_TAG:
        raise LayoutError(f"unsupported dimension order {doc.get('dim_order')!r}")
    layout = build_layout(int(doc["num_joints"]), doc["contact_joints"])
    frames = np.array(doc["frames"], dtype=np.float64)
    if frames.ndim == 1 and frames.size == 0:
        frames = frames.reshape(0, layout.total_dim)
    return MotionSequence(frames, layout, float(doc["fps"]))


def save_motion(motion: MotionSequence, path) -> None:
    Path(path).write_text(json.dumps(motion_to_dict(motion)))


def load_motion(path) -> MotionSequence:
    return motion_from_dict(json.loads(Path(path).read_text()))
