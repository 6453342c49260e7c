"""Randomized finite-difference checks for every differentiable op and loss node."""

import numpy as np

from dense_target.autodiff import Tensor, check_gradients, max_relative_error, ops
from dense_target.losses import FocalParams, HemParams, Reduction

STEP = 1e-5
KERNEL_TOL = 1e-4
MODEL_TOL = 1e-3


def _leaf(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def _away_from_zero(rng, *shape):
    # keeps relu inputs clear of the kink by much more than the FD step
    v = rng.uniform(0.05, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
    return Tensor(v, requires_grad=True)


def op_cases(rng):
    """``(name, build_loss, params)`` triples; ``build_loss`` rebuilds the graph each call."""
    cases = []

    def unary(name, fn, x):
        r = rng.normal(size=fn(x).shape)
        cases.append((name, lambda: ops.sum(ops.mul(fn(x), Tensor(r))), [x]))

    def binary(name, fn, a, b):
        r = rng.normal(size=fn(a, b).shape)
        cases.append((name, lambda: ops.sum(ops.mul(fn(a, b), Tensor(r))), [a, b]))

    binary("add", ops.add, _leaf(rng, 2, 3), _leaf(rng, 2, 3))
    binary("sub", ops.sub, _leaf(rng, 3, 2), _leaf(rng, 3, 2))
    binary("mul", ops.mul, _leaf(rng, 4), _leaf(rng, 4))
    c = float(rng.uniform(-2, 2))
    unary("scale", lambda t: ops.mul(t, c), _leaf(rng, 5))
    x = _leaf(rng, 3, 4)
    cases.append(("sum", lambda: ops.sum(ops.mul(x, x)), [x]))
    y = _leaf(rng, 6)
    cases.append(("mean", lambda: ops.mean(ops.mul(y, y)), [y]))
    s1, s2 = _leaf(rng, 3), _leaf(rng, 3)
    w1, w2 = rng.uniform(0, 2, 2)
    cases.append(("weighted_sum", lambda: ops.weighted_sum(
        [(w1, ops.sum(ops.mul(s1, s1))), (w2, ops.mean(ops.mul(s2, s1))), (0.0, ops.sum(s2))]), [s1, s2]))
    unary("relu", ops.relu, _away_from_zero(rng, 2, 5))
    unary("sigmoid", ops.sigmoid, _leaf(rng, 7, lo=-6, hi=6))
    unary("reshape", lambda t: ops.reshape(t, (3, 4)), _leaf(rng, 2, 6))
    unary("transpose", lambda t: ops.transpose(t, (2, 0, 1)), _leaf(rng, 2, 3, 4))
    binary("concat", lambda a, b: ops.concat([a, b], axis=1), _leaf(rng, 2, 3), _leaf(rng, 2, 1))
    binary("concat_channels", ops.concat_channels, _leaf(rng, 1, 2, 3, 3), _leaf(rng, 1, 1, 3, 3))
    binary("add_bias", ops.add_bias, _leaf(rng, 1, 3, 2, 2), _leaf(rng, 3))

    for impl in ("im2col", "direct"):
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        k = int(rng.choice([1, 3]))
        xin = _leaf(rng, 1, 2, 5, 6)
        w = _leaf(rng, 3, 2, k, k)
        b = _leaf(rng, 3)
        out_shape = ops.conv2d(xin, w, b, stride, pad, impl).shape
        r = rng.normal(size=out_shape)
        cases.append((f"conv2d[{impl},s{stride},p{pad},k{k}]",
                      lambda xin=xin, w=w, b=b, stride=stride, pad=pad, impl=impl, r=r:
                      ops.sum(ops.mul(ops.conv2d(xin, w, b, stride, pad, impl), Tensor(r))), [xin, w, b]))

    unary("upsample2x[bilinear]", lambda t: ops.upsample2x(t, "bilinear"), _leaf(rng, 1, 2, 3, 4))
    unary("upsample2x[nearest]", lambda t: ops.upsample2x(t, "nearest"), _leaf(rng, 1, 2, 3, 2))
    oh, ow = (int(v) for v in rng.integers(2, 9, 2))
    unary("resize_bilinear", lambda t: ops.resize_bilinear(t, oh, ow), _leaf(rng, 1, 1, 4, 5))
    unary("downsample2x_avg", ops.downsample2x_avg, _leaf(rng, 1, 2, 4, 6))

    logits = _leaf(rng, 12, lo=-3, hi=3)
    labels = rng.integers(-1, 2, 12)
    fp = FocalParams(alpha=float(rng.uniform(0.1, 0.9)), gamma=float(rng.uniform(0, 3)))
    cases.append(("focal_loss", lambda: ops.focal_loss(ops.sigmoid(logits), labels, fp), [logits]))

    pred = _leaf(rng, 6, 4, lo=-3, hi=3)
    target = rng.uniform(-3, 3, (6, 4))
    # keep residuals away from the |x| = 1 kink
    near = np.abs(np.abs(pred.data - target) - 1) < 1e-3
    target[near] += 0.01
    mask = rng.uniform(size=6) < 0.6
    mask[0] = True
    cases.append(("smooth_l1_loss", lambda: ops.smooth_l1_loss(pred, target, mask), [pred]))

    for red in Reduction:
        gp = _leaf(rng, 5, 5, lo=0, hi=1)
        gt = rng.uniform(size=(5, 5))
        hp = HemParams(reduction=red)
        cases.append((f"gaussian_loss[{red.value}]", lambda gp=gp, gt=gt, hp=hp: ops.gaussian_loss(gp, gt, hp),
                      [gp]))
    return cases


def kernel_errors(seed):
    """Worst relative error per op for one seed."""
    rng = np.random.default_rng(seed)
    return {name: check_gradients(build, params, STEP) for name, build, params in op_cases(rng)}


def model_error(kind, seed, size=16, samples_per_param=3):
    """End-to-end check of the toy model's total loss on a ``size``-square image.

    Every parameter tensor is probed at a few random entries (a full sweep
    over thousands of weights would take minutes without adding coverage).
    """
    from dense_target.datasets import Sample
    from dense_target.toynet import TrainConfig, build_model
    from dense_target.toynet.train import loss_graph, prepare_targets

    rng = np.random.default_rng(seed)
    model = build_model(kind, seed=seed)
    image = rng.uniform(0, 1, (size, size))
    x1, y1 = rng.integers(0, size // 2, 2)
    w, h = rng.integers(4, size // 2 + 1, 2)
    boxes = np.array([[x1, y1, min(size, x1 + w), min(size, y1 + h)]], dtype=np.float64)
    cfg = TrainConfig()
    target = prepare_targets(model, [Sample(0, image, boxes)], cfg)[0]
    # randomize heads so gradients are not dominated by the prior init
    for t in model.parameters():
        t.data = t.data + rng.normal(0, 0.05, t.shape)

    def loss():
        return loss_graph(model, image, target, cfg)[0]

    params = model.parameters()
    for p in params:
        p.grad = None
    loss().backward()
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        grad = np.zeros(p.size) if p.grad is None else p.grad.reshape(-1)
        for idx in rng.choice(flat.size, size=min(samples_per_param, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + STEP
            fp = float(loss().data)
            flat[idx] = orig - STEP
            fm = float(loss().data)
            flat[idx] = orig
            num = (fp - fm) / (2 * STEP)
            worst = max(worst, max_relative_error(grad[idx], num))
    return worst
