"""Random float64 gradient-check instances for every differentiable layer type.

Inputs to max-pool and relu are generated away from their kinks so that
central differences stay on one smooth piece.
"""

import numpy as np

from segimgnet.autograd import Tensor, ops


def t64(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)


def spaced(rng, *shape):
    """Distinct values at least 0.05 apart and at least 0.025 from zero."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - n / 2.0 + 0.5) * 0.05
    return Tensor(vals.reshape(shape), requires_grad=True, dtype=np.float64)


def layer_cases(rng):
    """(name, loss_fn, inputs) triples."""
    x4 = t64(rng, 2, 3, 6, 6)
    xs = spaced(rng, 2, 3, 6, 6)
    z = t64(rng, 3, 4)
    r = Tensor(rng.standard_normal((3, 4)), dtype=np.float64)
    w, b = t64(rng, 4, 3, 3, 3), t64(rng, 4)
    wd = t64(rng, 3, 1, 3, 3)
    w7 = t64(rng, 3, 1, 7, 7, scale=0.3)
    wp = t64(rng, 5, 3, 1, 1)
    gain, off = t64(rng, 3), t64(rng, 3)
    dw, db = t64(rng, 5, 4), t64(rng, 5)
    a = t64(rng, 2, 3, 6, 6)
    xg = t64(rng, 2, 4, 3, 3)
    ggain, goff = t64(rng, 4), t64(rng, 4)

    def sq(t):
        return (t * t).sum()

    return [
        ("conv2d", lambda: sq(ops.conv2d(x4, w, b, 2, 1)), [x4, w, b]),
        ("conv2d_depthwise3", lambda: (ops.conv2d(x4, wd, None, 1, 1, 3) * x4).sum(), [x4, wd]),
        ("conv2d_depthwise7", lambda: sq(ops.conv2d(x4, w7, None, 1, 3, 3)), [x4, w7]),
        ("conv2d_pointwise", lambda: ops.sigmoid(ops.conv2d(x4, wp, None)).sum(), [x4, wp]),
        ("maxpool", lambda: sq(ops.pool2d(xs, "max", 2)), [xs]),
        ("meanpool", lambda: sq(ops.pool2d(x4, "mean", 3, 2)), [x4]),
        ("upsample", lambda: sq(ops.upsample_nearest(x4, 2)) * 0.5 + ops.upsample_nearest(x4, 3).sum(), [x4]),
        ("resize_nearest", lambda: sq(ops.resize_nearest(x4, (4, 9))), [x4]),
        ("relu", lambda: (ops.relu(xs) * xs).sum(), [xs]),
        ("gelu", lambda: (ops.gelu(x4) * x4).sum(), [x4]),
        ("sigmoid", lambda: (ops.sigmoid(x4) * x4).sum(), [x4]),
        ("softmax", lambda: (ops.softmax(z, axis=1) * r).sum(), [z]),
        ("layernorm", lambda: (ops.channel_layernorm(x4, gain, off) * ops.channel_layernorm(x4, gain, off) * x4).sum(),
         [x4, gain, off]),
        ("groupnorm", lambda: (ops.group_norm(xg, 2, ggain, goff) * ops.group_norm(xg, 2, ggain, goff) * xg).sum(),
         [xg, ggain, goff]),
        ("dense", lambda: sq(ops.dense(z, dw, db)), [z, dw, db]),
        ("mul_concat", lambda: (ops.concat_channels(a * x4, x4) * ops.concat_channels(x4, a)).sum(), [x4, a]),
        ("global_avg_pool", lambda: sq(ops.global_avg_pool(x4)), [x4]),
    ]
