"""Gradient-check case list covering every differentiable primitive.

Each case builds a scalar loss from float64 leaf tensors. Shared between
the unit tests and the acceptance battery so the two stay in sync.
"""

import numpy as np

from cmjivnet import autodiff as ad
from cmjivnet.autodiff import Tensor


def _leaf(rng, shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def build_cases(rng):
    """Returns a list of (name, params_dict, loss_fn) triples.

    loss_fn takes the params dict and returns a scalar Tensor. Inputs are
    kept away from kinks (relu, clip, maxpool ties) so central differences
    are valid at h=1e-4.
    """
    cases = []

    def case(name, params, fn):
        cases.append((name, params, fn))

    a = _leaf(rng, (3, 4))
    b = _leaf(rng, (3, 4))
    row = _leaf(rng, (4,))
    case("add", {"a": a, "b": b}, lambda p: ad.sum_(ad.add(p["a"], p["b"])))
    case("add_broadcast", {"a": a, "row": row},
         lambda p: ad.sum_(ad.square(ad.add(p["a"], p["row"]))))
    case("sub", {"a": a, "b": b}, lambda p: ad.sum_(ad.square(ad.sub(p["a"], p["b"]))))
    case("mul", {"a": a, "b": b}, lambda p: ad.sum_(ad.mul(p["a"], p["b"])))

    denom = Tensor(rng.uniform(0.5, 1.5, size=(3, 4)), requires_grad=True)
    case("div", {"a": a, "d": denom}, lambda p: ad.sum_(ad.div(p["a"], p["d"])))

    m1 = _leaf(rng, (3, 5))
    m2 = _leaf(rng, (5, 2))
    case("matmul", {"a": m1, "b": m2}, lambda p: ad.sum_(ad.matmul(p["a"], p["b"])))
    mb1 = _leaf(rng, (2, 3, 4))
    mb2 = _leaf(rng, (2, 4, 3))
    case("matmul_batched", {"a": mb1, "b": mb2},
         lambda p: ad.sum_(ad.square(ad.matmul(p["a"], p["b"]))))

    case("neg", {"a": a}, lambda p: ad.sum_(ad.square(ad.neg(p["a"]))))

    pos = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    case("power", {"x": pos}, lambda p: ad.sum_(ad.power(p["x"], 2.5)))
    case("square", {"a": a}, lambda p: ad.sum_(ad.square(p["a"])))
    case("exp", {"a": a}, lambda p: ad.sum_(ad.exp(p["a"])))
    case("log", {"x": pos}, lambda p: ad.sum_(ad.log(p["x"])))
    case("sqrt", {"x": pos}, lambda p: ad.sum_(ad.sqrt(p["x"])))

    away = Tensor(rng.uniform(0.2, 1.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4)),
                  requires_grad=True)
    case("relu", {"x": away}, lambda p: ad.sum_(ad.square(ad.relu(p["x"]))))
    case("sigmoid", {"a": a}, lambda p: ad.sum_(ad.sigmoid(p["a"])))
    case("tanh", {"a": a}, lambda p: ad.sum_(ad.tanh(p["a"])))
    case("softplus", {"a": a}, lambda p: ad.sum_(ad.softplus(p["a"])))

    interior = Tensor(rng.uniform(-0.4, 0.4, size=(3, 4)), requires_grad=True)
    case("clip", {"x": interior},
         lambda p: ad.sum_(ad.square(ad.clip(p["x"], -0.5, 0.5))))

    case("sum_axis", {"a": a}, lambda p: ad.sum_(ad.square(ad.sum_(p["a"], axis=0))))
    case("sum_keepdims", {"a": a},
         lambda p: ad.sum_(ad.square(ad.sum_(p["a"], axis=1, keepdims=True))))
    case("mean", {"a": a}, lambda p: ad.sum_(ad.square(ad.mean(p["a"], axis=1))))
    case("squared_difference", {"a": a, "b": b},
         lambda p: ad.sum_(ad.squared_difference(p["a"], p["b"])))

    logits = _leaf(rng, (4, 5))
    case("softmax", {"x": logits},
         lambda p: ad.sum_(ad.square(ad.softmax(p["x"], axis=-1))))

    ratio = Tensor(rng.uniform(0.5, 2.0, size=(6,)), requires_grad=True)
    case("log_corrected_self", {"x": ratio},
         lambda p: ad.sum_(ad.log_with_corrected_grad(
             ad.mean(ad.exp(p["x"])), float(np.exp(p["x"].data).mean()))))

    case("reshape", {"a": a},
         lambda p: ad.sum_(ad.square(ad.reshape(p["a"], (4, 3)))))
    case("flatten", {"a": a}, lambda p: ad.sum_(ad.square(ad.flatten(p["a"]))))
    case("transpose", {"a": a},
         lambda p: ad.sum_(ad.square(ad.matmul(p["a"], ad.transpose(p["a"], (1, 0))))))
    case("concat", {"a": a, "b": b},
         lambda p: ad.sum_(ad.square(ad.concat([p["a"], p["b"]], axis=1))))

    wide = _leaf(rng, (2, 6))
    case("split", {"x": wide},
         lambda p: ad.sum_(ad.square(ad.split(p["x"], 3, axis=1)[1])))
    case("getitem", {"a": a}, lambda p: ad.sum_(ad.square(p["a"][1:3, :2])))

    pool_src = _leaf(rng, (5, 7))
    idx = np.array([0, 3, 3, 6, 1])
    case("take", {"x": pool_src},
         lambda p: ad.sum_(ad.square(ad.take(p["x"], idx, axis=1))))

    edges = _leaf(rng, (2, 6))
    case("sym_from_edges", {"e": edges},
         lambda p: ad.sum_(ad.square(ad.sym_from_edges(p["e"], 4))))

    img = _leaf(rng, (2, 3, 6, 6))
    kern = Tensor(rng.uniform(-0.5, 0.5, size=(4, 3, 3, 3)), requires_grad=True)
    kbias = _leaf(rng, (4,))
    case("conv2d", {"x": img, "w": kern, "b": kbias},
         lambda p: ad.sum_(ad.square(ad.conv2d(p["x"], p["w"], p["b"]))))

    timg = _leaf(rng, (2, 4, 3, 3))
    tkern = Tensor(rng.uniform(-0.5, 0.5, size=(4, 2, 4, 4)), requires_grad=True)
    tbias = _leaf(rng, (2,))
    case("conv_transpose2d", {"x": timg, "w": tkern, "b": tbias},
         lambda p: ad.sum_(ad.square(ad.conv_transpose2d(p["x"], p["w"], p["b"]))))

    # Margins > h keep the argmax stable under perturbation.
    case("maxpool2d", {"x": _pool_safe(rng)},
         lambda p: ad.sum_(ad.square(ad.maxpool2d(p["x"]))))

    wmat = _leaf(rng, (4, 3))
    wb = _leaf(rng, (3,))
    case("affine", {"x": a, "w": wmat, "b": wb},
         lambda p: ad.sum_(ad.square(ad.affine(p["x"], p["w"], p["b"]))))

    # The stopped branch hangs off a non-parameter leaf, so the numeric
    # derivative only sees the live path and must match the analytic one.
    frozen = Tensor(rng.uniform(0.5, 1.5, size=(3, 4)))
    case("stop_gradient", {"a": a},
         lambda p: ad.sum_(ad.mul(p["a"], ad.stop_gradient(ad.mul(frozen, 2.0)))))

    return cases


def _pool_safe(rng):
    """Input whose 2x2 window maxima win by a margin >> the FD step."""
    x = rng.uniform(-1.0, 0.0, size=(2, 2, 6, 6))
    wins = x.reshape(2, 2, 3, 2, 3, 2)
    pick_r = rng.integers(0, 2, size=(2, 2, 3, 3))
    pick_c = rng.integers(0, 2, size=(2, 2, 3, 3))
    for n in range(2):
        for c in range(2):
            for i in range(3):
                for j in range(3):
                    wins[n, c, i, pick_r[n, c, i, j], j, pick_c[n, c, i, j]] += 2.0
    return Tensor(x, requires_grad=True)
