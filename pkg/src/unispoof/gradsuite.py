"""Finite-difference verification suite for every differentiable op.

Shared by the `gradcheck` CLI subcommand and the acceptance tests.  All
fixtures are float64 with pinned seeds chosen to keep inputs away from
kinks (relu at 0, pooling ties, clip boundaries): a kink under a
finite-difference probe can only produce a false failure, never a false
pass, so a pinned passing fixture stays trustworthy.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .heads import (ArcFaceConfig, UadConfig, arcface_loss, bce_loss,
                    frm_embed, init_arcface, init_frm, init_uad, uad_forward)
from .hilo import HiLoConfig, hilo_attend, init_hilo
from .rng import SeedStream
from .swin import SwinConfig, build_layouts, encode, init_backbone
from .tensor import Tensor

__all__ = ["OP_CHECKS", "run_op_checks", "run_model_check", "TOLERANCE"]

TOLERANCE = 1e-4


def _t(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), dtype=np.float64,
                  requires_grad=True)


def _kink_safe(rng, *shape, margin=0.1):
    """Values bounded away from zero so relu probes cannot cross the kink."""
    sign = np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)
    return Tensor(sign * rng.uniform(margin, 1.0, size=shape),
                  dtype=np.float64, requires_grad=True)


def _check_add(rng):
    a, b = _t(rng, 3, 4), _t(rng, 4)
    return lambda *_: ((a + b) * (a - b) / (b + 3.0)).sum(), [a, b]


def _check_mul_scalar_chain(rng):
    a = _t(rng, 5)
    return lambda *_: (2.0 * a * a - a / 3.0 + 1.5).mean(), [a]


def _check_matmul(rng):
    a, b = _t(rng, 2, 3, 4), _t(rng, 4, 5)
    return lambda *_: (a @ b).sum(), [a, b]


def _check_linear(rng):
    x, w, b = _t(rng, 3, 4), _t(rng, 4, 2), _t(rng, 2)
    return lambda *_: T.linear(x, w, b).sum(), [x, w, b]


def _check_exp_log_sqrt(rng):
    a = _t(rng, 6, lo=0.2, hi=2.0)
    return lambda *_: (T.log(T.exp(a)) + T.sqrt(a)).sum(), [a]


def _check_sigmoid_tanh_gelu(rng):
    a = _t(rng, 9)
    return lambda *_: (T.sigmoid(a) + T.tanh(a) + T.gelu(a)).sum(), [a]


def _check_relu(rng):
    a = _kink_safe(rng, 8)
    return lambda *_: T.relu(a).sum(), [a]


def _check_clip(rng):
    # Entries at least 0.1 away from the clip boundaries.
    vals = np.concatenate([rng.uniform(-2.0, -0.6, 4), rng.uniform(-0.4, 0.4, 4),
                           rng.uniform(0.6, 2.0, 4)])
    a = Tensor(vals, dtype=np.float64, requires_grad=True)
    return lambda *_: (T.clip(a, -0.5, 0.5) * a).sum(), [a]


def _check_reshape_transpose(rng):
    a = _t(rng, 2, 3, 4)
    return (lambda *_: (T.transpose(a.reshape((6, 4)), (1, 0)) * 0.5).sum(),
            [a])


def _check_roll_concat_getitem(rng):
    a, b = _t(rng, 2, 4, 4), _t(rng, 2, 4, 4)
    def fn(*_):
        rolled = T.roll(a, (1, -2), axes=(1, 2))
        cat = T.concat([rolled, b], axis=2)
        return (cat[:, 1:3, ::2] * cat[:, 1:3, ::2]).sum()
    return fn, [a, b]


def _check_sum_mean(rng):
    a = _t(rng, 3, 4)
    return lambda *_: (a.sum(axis=0) * a.mean(axis=0)).sum(), [a]


def _check_conv2d(rng):
    x, k = _t(rng, 1, 5, 5, 2), _t(rng, 3, 3, 2, 3)
    b = _t(rng, 3)
    return lambda *_: T.conv2d(x, k, b).sum(), [x, k, b]


def _check_maxpool(rng):
    x = _t(rng, 2, 4, 4, 2)
    return lambda *_: (T.pool2d(x, 2, "max") * 2.0).sum(), [x]


def _check_avgpool(rng):
    x = _t(rng, 2, 4, 4, 2)
    return lambda *_: (T.pool2d(x, 2, "avg") * x.mean()).sum(), [x]


def _check_layer_norm(rng):
    x, g, b = _t(rng, 4, 6), _t(rng, 6, lo=0.5, hi=1.5), _t(rng, 6)
    return lambda *_: (T.layer_norm(x, g, b) * x).sum(), [x, g, b]


def _check_softmax(rng):
    x = _t(rng, 3, 5)
    return lambda *_: (T.softmax(x) * x).sum(), [x]


def _check_l2_normalize(rng):
    x = _t(rng, 4, 6, lo=0.5, hi=1.5)
    return lambda *_: (T.l2_normalize(x) * x).sum(), [x]


def _check_embedding_lookup(rng):
    # Repeated indices exercise gradient accumulation into shared rows.
    table = _t(rng, 7, 3)
    idx = np.array([[0, 3, 3], [6, 1, 0]])
    return lambda *_: T.embedding_lookup(table, idx).sum(), [table]


def _check_hilo(rng):
    cfg = HiLoConfig(channels=8, total_heads=4, hi_heads=2, window=2)
    params = {k: Tensor(v.data, dtype=np.float64, requires_grad=True)
              for k, v in init_hilo(cfg, SeedStream(3)).items()}
    x = _t(rng, 1, 4, 4, 8)
    def fn(*_):
        return (hilo_attend(params, x, cfg) * x).sum()
    return fn, [x, *params.values()]


OP_CHECKS = {
    "add-sub-div": _check_add,
    "mul-scalar": _check_mul_scalar_chain,
    "matmul": _check_matmul,
    "linear": _check_linear,
    "exp-log-sqrt": _check_exp_log_sqrt,
    "sigmoid-tanh-gelu": _check_sigmoid_tanh_gelu,
    "relu": _check_relu,
    "clip": _check_clip,
    "reshape-transpose": _check_reshape_transpose,
    "roll-concat-getitem": _check_roll_concat_getitem,
    "sum-mean": _check_sum_mean,
    "conv2d": _check_conv2d,
    "maxpool": _check_maxpool,
    "avgpool": _check_avgpool,
    "layer_norm": _check_layer_norm,
    "softmax": _check_softmax,
    "l2_normalize": _check_l2_normalize,
    "embedding_lookup": _check_embedding_lookup,
    "hilo_attention": _check_hilo,
}


def run_op_checks(seed: int = 0) -> dict[str, float]:
    """Max relative FD error per op fixture."""
    results = {}
    for name, build in OP_CHECKS.items():
        rng = np.random.default_rng(seed)
        fn, inputs = build(rng)
        results[name] = T.grad_check(fn, inputs)
    return results


def run_model_check(seed: int = 0, max_coords_per_input: int = 4) -> float:
    """End-to-end FD check: shallow backbone + FRM + ArcFace + UAD + BCE.

    A single scalar loss sums both task losses so one backward pass
    exercises every parameter.  Coordinates are sampled per tensor to
    keep the quadratic FD cost bounded.
    """
    model = SwinConfig(image_size=32, patch_size=4, embed_dim=8,
                       depths=(1, 1, 2, 1), num_heads=(2, 2, 2, 2),
                       window_size=2)
    arc_cfg = ArcFaceConfig(num_classes=3, embed_dim=16, scale=32.0, margin=0.5)
    th, tw, tc = model.tap_shape()
    uad_cfg = UadConfig(tap_height=th, tap_width=tw, tap_channels=tc,
                        total_heads=8, hi_heads=4, window=2)

    stream = SeedStream(seed)
    def to64(params):
        return {k: Tensor(v.data, dtype=np.float64, requires_grad=True)
                for k, v in params.items()}
    backbone = to64(init_backbone(model, stream.child("backbone")))
    frm = to64(init_frm(model.final_shape()[2], stream.child("frm"),
                        embed_dim=arc_cfg.embed_dim))
    arc = to64(init_arcface(arc_cfg, stream.child("arcface")))
    uad = to64(init_uad(uad_cfg, stream.child("uad")))

    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-1, 1, size=(2, 32, 32, 3)), dtype=np.float64,
               requires_grad=True)
    labels = np.array([0, 2])
    bona = np.array([1.0, 0.0])
    layouts = build_layouts(model)

    def loss_fn(*_):
        feats = encode(backbone, x, model, layouts)
        emb = frm_embed(frm, feats.final)
        face = arcface_loss(emb, labels, arc, arc_cfg)
        probs = uad_forward(uad, feats.taps[0], uad_cfg)
        return face + bce_loss(probs, bona)

    inputs = [x, *backbone.values(), *frm.values(), *arc.values(),
              *uad.values()]
    return T.grad_check(loss_fn, inputs,
                        max_coords_per_input=max_coords_per_input)
