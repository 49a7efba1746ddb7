"""Interaction-aware evaluation metrics and the evaluation embedders."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import text_encode
from .motion import FOOT_JOINTS, HAND_JOINTS, MotionSequence, PoseLayout, Skeleton

LIMBS = ("left arm", "right arm", "left leg", "right leg")


def _yaw_matrix(theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    z, o = np.zeros_like(theta), np.ones_like(theta)
    return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2)


def to_joint_positions(x: MotionSequence | np.ndarray, layout: PoseLayout | None = None) -> np.ndarray:
    """Decode pose rows into world joint positions (T, N, 3).

    Heading is the running sum of root angular velocity; the root moves by
    the heading-rotated linear velocity each frame, and its height is read
    directly. Other joints are the root plus their heading-rotated relative
    position.
    """
    if isinstance(x, MotionSequence):
        frames, layout = x.frames, x.layout
    else:
        frames = np.asarray(x, dtype=np.float64)
        if layout is None:
            raise ValueError("layout required for raw arrays")
    if frames.shape[-1] != layout.total_dim:
        raise ValueError(f"row width {frames.shape[-1]} != layout dim {layout.total_dim}")
    T = frames.shape[0]
    n = layout.num_joints
    yaw = np.concatenate([[0.0], np.cumsum(frames[:-1, 0])])
    rot = _yaw_matrix(yaw)                                       # (T, 3, 3)
    lin = np.zeros((T, 3))
    lin[:, 0] = frames[:, 1]
    lin[:, 2] = frames[:, 2]
    step = np.einsum("tij,tj->ti", rot, lin)
    root = np.zeros((T, 3))
    root[1:] = np.cumsum(step[:-1], axis=0)
    root[:, 1] = frames[:, 3]
    rel = frames[:, layout.group("joint_positions")].reshape(T, n - 1, 3)
    out = np.empty((T, n, 3))
    out[:, 0] = root
    out[:, 1:] = root[:, None, :] + np.einsum("tij,tnj->tni", rot, rel)
    return out


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if pred.shape[-1] != 3:
        raise ValueError("trailing axis must hold xyz")


def mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = np.asarray(pred), np.asarray(gt)
    _check_pair(pred, gt)
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def mpvpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean per-joint velocity error over frame differences; frames on axis -3."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    _check_pair(pred, gt)
    if pred.ndim < 3 or pred.shape[-3] < 2:
        raise ValueError("need at least two frames")
    return mpjpe(np.diff(pred, axis=-3), np.diff(gt, axis=-3))


def joint_subset_jpe(pred: np.ndarray, gt: np.ndarray, subset) -> float:
    subset = list(subset)
    if not subset:
        raise ValueError("empty joint subset")
    pred, gt = np.asarray(pred), np.asarray(gt)
    _check_pair(pred, gt)
    return mpjpe(pred[..., subset, :], gt[..., subset, :])


def hand_jpe(pred, gt) -> float:
    return joint_subset_jpe(pred, gt, HAND_JOINTS)


def foot_jpe(pred, gt) -> float:
    return joint_subset_jpe(pred, gt, FOOT_JOINTS)


def _local_positions(x: MotionSequence) -> np.ndarray:
    T, n = x.num_frames, x.layout.num_joints
    out = np.zeros((T, n, 3))
    out[:, 1:] = x.frames[:, x.layout.group("joint_positions")].reshape(T, n - 1, 3)
    return out


def masked_part_mpjpe(pred: MotionSequence, gt: MotionSequence, parts, skeleton: Skeleton,
                      frame: str = "world") -> float:
    """MPJPE over the joints of ``parts``.

    ``frame="world"`` decodes the full trajectory, so root drift counts;
    ``frame="local"`` compares the stored root-relative positions only.
    """
    joints = sorted({j for p in parts for j in skeleton.joints_of(p)})
    if frame == "world":
        a, b = to_joint_positions(pred), to_joint_positions(gt)
    elif frame == "local":
        a, b = _local_positions(pred), _local_positions(gt)
    else:
        raise ValueError(f"unknown frame {frame!r}")
    return joint_subset_jpe(a, b, joints)


def r_precision_top3(motion_emb: np.ndarray, text_emb: np.ndarray, pool_size: int = 32,
                     seed: int = 0, top_k: int = 3) -> float:
    """Fraction of motions whose own text ranks in the top ``top_k`` of a random pool.

    Ties with the true text are broken uniformly at random.
    """
    m = np.asarray(motion_emb, dtype=np.float64)
    t = np.asarray(text_emb, dtype=np.float64)
    if m.shape[0] != t.shape[0]:
        raise ValueError("motion and text lists differ in length")
    n = m.shape[0]
    if not 1 <= pool_size <= n:
        raise ValueError(f"pool size {pool_size} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    hits = 0
    for i in range(n):
        others = np.delete(np.arange(n), i)
        distractors = rng.choice(others, size=pool_size - 1, replace=False) if pool_size > 1 else others[:0]
        d_true = np.linalg.norm(m[i] - t[i])
        d = np.linalg.norm(m[i][None, :] - t[distractors], axis=1)
        better = int((d < d_true).sum())
        ties = int((d == d_true).sum())
        rank = better + (int(rng.integers(ties + 1)) if ties else 0)
        hits += rank < top_k
    return hits / n


def mm_dist(motion_emb: np.ndarray, text_emb: np.ndarray) -> float:
    m = np.asarray(motion_emb, dtype=np.float64)
    t = np.asarray(text_emb, dtype=np.float64)
    if m.shape != t.shape:
        raise ValueError("motion and text embeddings must pair up")
    return float(np.linalg.norm(m - t, axis=1).mean())


def part_energy(x: MotionSequence, skeleton: Skeleton) -> dict[str, float]:
    """Mean per-frame displacement of root-relative joint positions, per part."""
    T, n = x.num_frames, x.layout.num_joints
    rel = _local_positions(x)
    step = np.linalg.norm(np.diff(rel, axis=0), axis=-1) if T > 1 else np.zeros((1, n))
    out = {}
    for part in LIMBS + ("torso",):
        joints = skeleton.joints_of(part)
        out[part] = float(step[:, joints].mean()) if joints else 0.0
    return out


def part_energy_accuracy(motions, instructed, skeleton: Skeleton) -> float:
    """Share of motions whose instructed part strictly out-moves the other limbs.

    Candidates are the four limbs plus any instructed non-limb part.
    Multi-part instructions count when every instructed part beats all
    non-instructed candidates.
    """
    motions = list(motions)
    instructed = [frozenset([p]) if isinstance(p, str) else frozenset(p) for p in instructed]
    if not motions or len(motions) != len(instructed):
        raise ValueError("need matching, non-empty lists")
    score = 0
    for x, parts in zip(motions, instructed):
        energy = part_energy(x, skeleton)
        cands = set(LIMBS) | set(parts & set(energy))
        rivals = cands - parts
        target = parts & cands
        if not target:
            continue
        lo = min(energy[p] for p in target)
        if all(lo > energy[r] for r in rivals):
            score += 1
    return score / len(motions)


# ------------------------------------------------------------- embedders

def motion_features(x: MotionSequence | np.ndarray) -> np.ndarray:
    """Pooled per-dimension statistics: mean, std and mean |frame difference|."""
    f = x.frames if isinstance(x, MotionSequence) else np.asarray(x)
    d = np.abs(np.diff(f, axis=0)).mean(0) if f.shape[0] > 1 else np.zeros(f.shape[1])
    return np.concatenate([f.mean(0), f.std(0), d])


@dataclass
class MotionEncoder:
    """Linear map from pooled motion statistics into the text embedding space."""
    weight: np.ndarray       # (E, F)
    mean: np.ndarray         # (F,)
    scale: np.ndarray        # (F,)

    def __call__(self, x) -> np.ndarray:
        z = (motion_features(x) - self.mean) / self.scale
        return z @ self.weight.T

    def encode_many(self, xs) -> np.ndarray:
        return np.stack([self(x) for x in xs])


def train_motion_encoder(motions, texts, text_dim: int = 64, steps: int = 300, lr: float = 0.05,
                         temperature: float = 0.5, seed: int = 0) -> MotionEncoder:
    """Contrastive fit: logits are negative squared distances to every text."""
    feats = np.stack([motion_features(x) for x in motions])
    mean = feats.mean(0)
    # floor keeps near-constant training dims from exploding on generated motions
    scale = np.maximum(feats.std(0), 1e-2)
    z = (feats - mean) / scale
    t = np.stack([text_encode(s, text_dim) for s in texts])
    # identical texts are positives for each other
    uniq, label = np.unique(np.array(texts), return_inverse=True)
    targets = (label[:, None] == label[None, :]).astype(np.float64)
    targets /= targets.sum(1, keepdims=True)
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, (text_dim, z.shape[1]))
    n = z.shape[0]
    for _ in range(steps):
        m = z @ w.T
        d2 = ((m[:, None, :] - t[None, :, :]) ** 2).sum(-1)
        logits = -d2 / temperature
        logits -= logits.max(1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(1, keepdims=True)
        dlogits = (p - targets) / n
        # d logit_ij / d m_i = -2 (m_i - t_j) / temperature
        coef = -2.0 / temperature * dlogits
        dm = coef.sum(1)[:, None] * m - coef @ t
        w -= lr * dm.T @ z
    return MotionEncoder(w, mean, scale)
