"""Central finite-difference checks for layer gradients."""

import numpy as np

from .layers import SoftmaxCrossEntropy, layer_forward_backward


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def _numeric(f, arr, step):
    """Gradient of scalar ``f()`` w.r.t. ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = f()
        flat[i] = old - step
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * step)
    return g


def check_layer(layer, x, rng, step=1e-6):
    """Largest relative error over the input and every parameter gradient.

    The scalar objective is ``sum(layer(x) * r)`` for a fixed random ``r``.
    """
    x = np.array(x, dtype=np.float64)
    out = layer.forward(x)
    r = rng.standard_normal(out.shape)
    _, dx, pgrads = layer_forward_backward(layer, x, r)

    def objective():
        return float(np.sum(layer.forward(x) * r))

    errors = {"input": relative_error(dx, _numeric(objective, x, step))}
    for key, p in layer.params.items():
        errors[key] = relative_error(pgrads[key], _numeric(objective, p, step))
    return errors


def check_softmax_cross_entropy(logits, onehot, step=1e-6):
    logits = np.array(logits, dtype=np.float64)
    loss = SoftmaxCrossEntropy()
    loss.forward(logits, onehot)
    analytic = loss.backward()
    numeric = _numeric(lambda: SoftmaxCrossEntropy().forward(logits, onehot), logits, step)
    return relative_error(analytic, numeric)
