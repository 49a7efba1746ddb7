"""Oracles, small models and a central-difference checker shared across the tests."""
import math

import numpy as np

from partmotion.denoiser import (
    Batch,
    ConditionBundle,
    DenoiserConfig,
    DenoiserParams,
    init_denoiser,
    predict_x0,
    stage1_loss,
)
from partmotion.diffusion import forward_sample_batch, make_rng, make_schedule, sample_loop, scaled_linear_betas
from partmotion.motion import Skeleton, build_layout, part_mask
from partmotion.optim import AdamState, adam_step
from partmotion.part_gcn import GcnConfig, build_adjacency_subsets, init_gcn
from partmotion.pipeline import PipelineModel
from partmotion.training import stage2_objective

TINY_SKELETON = Skeleton(("pelvis", "lhip", "spine"), (-1, 0, 0), ("pelvis", "left leg", "torso"))
TINY_LAYOUT = build_layout(3, [1])


def rel_err(num, an):
    return float(np.linalg.norm(num - an) / max(np.linalg.norm(num) + np.linalg.norm(an), 1e-30))


def numeric_grad(loss, store, name, eps=1e-6):
    num = np.zeros_like(store[name])
    for i in np.ndindex(store[name].shape):
        old = store[name][i]
        store[name][i] = old + eps
        a = loss()
        store[name][i] = old - eps
        b = loss()
        store[name][i] = old
        num[i] = (a - b) / (2 * eps)
    return num


class TinyProblem:
    """Stage-2 objective on a 3-joint skeleton; under 500 learnable scalars in total."""

    def __init__(self, seed=0):
        rng = np.random.default_rng(seed)
        lay, sk = TINY_LAYOUT, TINY_SKELETON
        cfg = DenoiserConfig(lay.total_dim, width=3, depth=1, time_dim=2, frame_dim=2, text_dim=4,
                             cond_dim=2, num_steps=10)
        self.den = init_denoiser(cfg, seed)
        for k, v in self.den.tensors.items():
            self.den.tensors[k] = v + rng.normal(0, 0.3, v.shape)
        self.subsets = build_adjacency_subsets(sk)
        self.gcn = init_gcn(GcnConfig(3, hidden=(2,), conv_layers=1, cond_dim=2), self.subsets.k, seed + 1)
        B, T, D = 2, 5, lay.total_dim
        self.x0 = rng.normal(size=(B, T, D))
        self.x_t = rng.normal(size=(B, T, D))
        self.t = np.array([3, 7])
        self.mask = np.stack([part_mask({"left leg"}, lay, sk).bits, part_mask({"torso"}, lay, sk).bits])
        self.x_inter = self.x0 * self.mask[:, None, :]
        self.conds = ConditionBundle(rng.normal(size=(B, 4)), 1 - self.mask, rng.normal(size=(B, 4)), None,
                                     np.zeros((B, 4), bool))

    @property
    def num_params(self):
        return self.den.num_params + self.gcn.num_params

    def objective(self):
        return stage2_objective(self.den, self.gcn, self.subsets, TINY_LAYOUT, self.x0, self.x_t, self.t,
                                self.conds, self.x_inter, self.mask)

    def loss(self):
        return self.objective()[0]

    def gradient_errors(self):
        _, g_den, g_gcn = self.objective()
        errs = {}
        for k in self.den.tensors:
            errs["den/" + k] = rel_err(numeric_grad(self.loss, self.den.tensors, k), g_den.tensors[k])
        for k in self.gcn.tensors:
            errs["gcn/" + k] = rel_err(numeric_grad(self.loss, self.gcn.tensors, k), g_gcn[k])
        return errs


def connected_graphs(max_nodes):
    """Every labelled connected simple graph on 1..max_nodes nodes, as (n, edge list)."""
    from itertools import combinations
    for n in range(1, max_nodes + 1):
        pairs = list(combinations(range(n), 2))
        for code in range(1 << len(pairs)):
            edges = [pairs[b] for b in range(len(pairs)) if code >> b & 1]
            seen, stack = {0}, [0]
            while stack:
                u = stack.pop()
                for a, b in edges:
                    for x, y in ((a, b), (b, a)):
                        if x == u and y not in seen:
                            seen.add(y)
                            stack.append(y)
            if len(seen) == n:
                yield n, edges


def neighbour_sum_oracle(feats, n, edge_subsets, weights):
    """Per-node loop: z_i = sum_k sum_{j in N_k(i) + i} F_j W_k / sqrt(d_i d_j), then relu."""
    lead = np.broadcast_shapes(feats.shape[:-2], weights[0].shape[:-2])
    out = np.zeros(lead + (n, weights[0].shape[-1]))
    for k, edges in enumerate(edge_subsets):
        nbrs = {i: [i] for i in range(n)}
        for a, b in edges:
            nbrs[a].append(b)
            nbrs[b].append(a)
        deg = {i: len(nbrs[i]) for i in range(n)}
        for i in range(n):
            for j in nbrs[i]:
                out[..., i, :] += np.einsum("...c,...cd->...d", feats[..., j, :], weights[k]) / np.sqrt(deg[i] * deg[j])
    return np.maximum(out, 0.0)


def gaussian_posterior_mean(x_t, x0, t, betas):
    """Combine prior q(x_{t-1}|x0) and likelihood q(x_t|x_{t-1}) by precision weighting."""
    alphas = 1.0 - np.asarray(betas)
    ab_prev = np.prod(alphas[: t - 1])
    if t == 1:
        return np.asarray(x0, dtype=float)     # prior collapses onto x0
    prior_var = 1.0 - ab_prev
    lik_var = betas[t - 1]
    prec = 1.0 / prior_var + alphas[t - 1] / lik_var
    return (np.sqrt(ab_prev) * x0 / prior_var + np.sqrt(alphas[t - 1]) * x_t / lik_var) / prec


def small_model(layout, skeleton, seed=0, steps=6):
    """Randomly perturbed two-stage pipeline, cheap enough to sample hundreds of times."""
    rng = np.random.default_rng(seed)
    cfg = DenoiserConfig(layout.total_dim, width=16, depth=1, time_dim=4, frame_dim=4, cond_dim=4,
                         num_steps=steps)
    s1, s2 = init_denoiser(cfg, seed), init_denoiser(cfg, seed + 1)
    for p in (s1, s2):
        p.tensors = {k: v + rng.normal(0, 0.3, v.shape) for k, v in p.tensors.items()}
    subs = build_adjacency_subsets(skeleton)
    gcn = init_gcn(GcnConfig(skeleton.num_joints, hidden=(4,), cond_dim=4), subs.k, seed + 2)
    return PipelineModel(layout, skeleton, make_schedule(steps, 1e-2, 0.3), s1, s2, gcn, subsets=subs)


# two equal Gaussian modes at -1.5 and +1.5
TOY_MU, TOY_SD = 1.5, 0.3


def toy_draw(rng, n):
    return np.where(rng.random(n) < 0.5, -TOY_MU, TOY_MU) + TOY_SD * rng.standard_normal(n)


def toy_bin_probs(edges):
    """Exact mixture mass per bin; the outer bins absorb the tails."""
    def cdf(x):
        return sum(0.25 * (1 + math.erf((x - m) / (TOY_SD * math.sqrt(2)))) for m in (-TOY_MU, TOY_MU))
    inner = [cdf(e) for e in edges[1:-1]]
    return np.diff([0.0, *inner, 1.0])


def _unconditioned(b):
    z = np.zeros((b, 2))
    return ConditionBundle(z, np.zeros((b, 1)), z, None, np.ones((b, 4), bool))


def train_toy(seed=0, steps=12000, batch=512, lr=3e-3, t_steps=50):
    """Fit a one-dimensional x0 predictor to the two-mode toy; cosine-decayed Adam."""
    cfg = DenoiserConfig(1, width=64, depth=2, time_dim=16, frame_dim=2, text_dim=2, cond_dim=2,
                         num_steps=t_steps)
    params = init_denoiser(cfg, seed)
    schedule = make_schedule(t_steps, *scaled_linear_betas(t_steps))
    rng = np.random.default_rng(seed)
    opt = AdamState(lr=lr)
    conds = _unconditioned(batch)
    for s in range(steps):
        opt.lr = lr * 0.5 * (1 + math.cos(math.pi * s / steps))
        x0 = toy_draw(rng, batch).reshape(batch, 1, 1)
        t = rng.integers(1, t_steps + 1, batch)
        x_t, _ = forward_sample_batch(x0, t, schedule, rng)
        _, grads, _ = stage1_loss(params, Batch(x0, x_t, t, conds))
        params = DenoiserParams(cfg, adam_step(opt, params.tensors, grads.tensors))
    return params, schedule


def sample_toy(params, schedule, n, seed=0):
    conds = _unconditioned(n)
    out = sample_loop(lambda x, t: predict_x0(params, x, np.full(n, t), conds), (n, 1, 1), schedule,
                      make_rng(seed, 7))
    return out.ravel()
