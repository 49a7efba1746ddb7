import numpy as np
import pytest

from partmotion.semantics import InteractionSpec, none_spec
from partmotion.synth import RECIPES, synth_motion
from partmotion.training import (
    TrainConfig,
    make_items,
    train_stage1,
    train_stage2,
    train_unconditional,
)

TINY = dict(steps=60, batch_size=8, lr=3e-3, width=16, depth=1, time_dim=4, frame_dim=4, cond_dim=4,
            gcn_hidden=(4,), t_steps=10, log_every=0)


@pytest.fixture(scope="module")
def items(layout, skeleton):
    motions, caps, specs = [], [], []
    for name in ("wave_left_arm", "kick_right_leg", "stand"):
        for i in range(4):
            x, cap, spec = synth_motion(RECIPES[name], i)
            motions.append(x.frames[:4])
            caps.append(cap)
            specs.append(spec)
    return make_items(motions, caps, specs, layout, skeleton)


def early_late(losses):
    return np.mean(losses[:10]), np.mean(losses[-10:])


def test_stage1_loss_falls(items):
    params, losses = train_stage1(items, TrainConfig(**TINY))
    first, last = early_late(losses)
    assert last < first
    assert params.config.pose_dim == 263


def test_stage2_and_baseline_losses_fall(items, layout, skeleton):
    cfg = TrainConfig(**TINY)
    _, gcn, losses = train_stage2(items, cfg, layout, skeleton)
    first, last = early_late(losses)
    assert last < first
    assert gcn.num_subsets == 6
    _, base = train_unconditional(items, cfg)
    first, last = early_late(base)
    assert last < first


def test_training_is_seeded(items):
    cfg = TrainConfig(**{**TINY, "steps": 5})
    a, la = train_stage1(items, cfg)
    b, lb = train_stage1(items, cfg)
    assert la == lb
    for k in a.tensors:
        np.testing.assert_array_equal(a.tensors[k], b.tensors[k])


def test_stage2_accepts_generated_sources(items, layout, skeleton):
    cfg = TrainConfig(**{**TINY, "steps": 3})
    src = [np.zeros_like(it.x0) for it in items]
    _, _, a = train_stage2(items, cfg, layout, skeleton, x_inter_source=src)
    _, _, b = train_stage2(items, cfg, layout, skeleton)
    assert a != b


def test_items_carry_masks(items):
    wave = items[0]
    assert wave.mask.sum() == 48 and wave.spec.parts == {"left arm"}
    assert items[-1].mask.sum() == 0


def test_empty_inputs_are_rejected(items, layout, skeleton):
    cfg = TrainConfig(**TINY)
    quiet = [it for it in items if it.spec.is_none]
    with pytest.raises(ValueError):
        train_stage1(quiet, cfg)
    with pytest.raises(ValueError):
        train_stage2([], cfg, layout, skeleton)
    with pytest.raises(ValueError):
        train_unconditional([], cfg)
    ragged = make_items([np.zeros((3, 263)), np.zeros((4, 263))], ["a", "b"],
                        [none_spec("a"), none_spec("b")], layout, skeleton)
    with pytest.raises(ValueError):
        train_unconditional(ragged, cfg)


def test_config_dict_round_trip():
    cfg = TrainConfig(steps=7, gcn_hidden=(3, 5))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"stepz": 3})
    assert cfg.schedule().num_steps == 50
    assert cfg.denoiser_config(263).input_dim == 263 + 64 + 16 + 4 * 64


def test_spec_with_unknown_part_is_rejected(layout, skeleton):
    with pytest.raises(ValueError):
        make_items([np.zeros((2, 263))], ["x"], [InteractionSpec((("tail", "wags"),), "")], layout, skeleton)
