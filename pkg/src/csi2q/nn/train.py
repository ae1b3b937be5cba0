"""Single- and dual-task training with Adam and cosine learning-rate decay."""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import InvalidArgument
from .layers import SoftmaxCrossEntropy, one_hot
from .model import DualTaskModel, encode_iq

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lam: float = 1.0
    lr0: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    rng_seed: int = 0
    lr_schedule: str = "cosine"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidArgument("lambda must be > 0")
        if not self.lr0 > 0:
            raise InvalidArgument("lr0 must be > 0")
        if self.epochs < 1:
            raise InvalidArgument("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")
        if self.lr_schedule not in ("cosine", "constant"):
            raise InvalidArgument(f"unknown lr schedule {self.lr_schedule!r}")

    def to_dict(self):
        return asdict(self)


def cosine_lr(step, total_steps, lr0):
    """``lr0 * (1 + cos(pi * step / total_steps)) / 2``."""
    if total_steps < 1:
        raise InvalidArgument("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise InvalidArgument(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1 + math.cos(math.pi * step / total_steps)) / 2


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params  # list of (name, layer, key)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros_like(layer.params[key]) for name, layer, key in params}
        self.v = {name: np.zeros_like(layer.params[key]) for name, layer, key in params}
        self.t = 0

    def step(self, lr):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for name, layer, key in self.params:
            g = layer.grads[key]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            layer.params[key] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    model: DualTaskModel
    history: dict = field(default_factory=dict)
    initial_loss: float = float("nan")


def _check_labels(labels, n_classes, what):
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) == 0:
        raise InvalidArgument(f"{what} labels must be a non-empty 1-D array")
    if labels.min() < 1 or labels.max() > n_classes:
        raise InvalidArgument(f"{what} labels must lie in [1, {n_classes}]")
    return labels.astype(np.int64) - 1


class _BatchCycler:
    """Endless shuffled mini-batches drawn from one dataset."""

    def __init__(self, n, batch_size, rng):
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self._perm = rng.permutation(n)
        self._pos = 0

    def next(self):
        out = []
        need = self.batch_size
        while need:
            if self._pos == self.n:
                self._perm = self.rng.permutation(self.n)
                self._pos = 0
            take = min(need, self.n - self._pos)
            out.append(self._perm[self._pos:self._pos + take])
            self._pos += take
            need -= take
        return np.concatenate(out)


def mean_loss(model, x_enc, y0, domain="csi", batch_size=256):
    """Mean cross-entropy of ``model`` over encoded inputs (no updates)."""
    n_classes = model.spec.n_classes if domain == "csi" else model.spec.n_aux_classes
    total = 0.0
    for i in range(0, len(x_enc), batch_size):
        logits = model.forward(domain, x_enc[i:i + batch_size])
        yb = one_hot(y0[i:i + batch_size], n_classes)
        total += SoftmaxCrossEntropy().forward(logits, yb) * len(yb)
    return total / len(x_enc)


def train_dual(csi_x, csi_y, iq_x, iq_y, spec, cfg, progress=None):
    """Jointly minimise ``L_main + lam * L_auxi``.

    Every step takes one CSI batch (epochs are defined by the CSI set) and an
    independently drawn IQ batch; the extractor receives the sum of both
    heads' gradients. Labels are 1-based device ids.
    """
    if spec.n_aux_classes < 1:
        raise InvalidArgument("dual training needs n_aux_classes >= 1")
    return _train(csi_x, csi_y, iq_x, iq_y, spec, cfg, dual=True, progress=progress)


def train_single(csi_x, csi_y, spec, cfg, progress=None):
    """Classifier-only training; same CSI batch schedule as ``train_dual``."""
    return _train(csi_x, csi_y, None, None, spec, cfg, dual=False, progress=progress)


def _train(csi_x, csi_y, iq_x, iq_y, spec, cfg, dual, progress):
    y_main = _check_labels(csi_y, spec.n_classes, "CSI")
    x_main = encode_iq(csi_x, spec.input_norm)
    if len(x_main) != len(y_main):
        raise InvalidArgument("CSI samples and labels differ in length")
    if dual:
        y_aux = _check_labels(iq_y, spec.n_aux_classes, "IQ")
        x_aux = encode_iq(iq_x, spec.input_norm)
        if len(x_aux) != len(y_aux):
            raise InvalidArgument("IQ samples and labels differ in length")

    model = DualTaskModel(spec, seed=cfg.rng_seed)
    params = [p for p in model.parameters() if dual or not p[0].startswith(("iq_stem", "discriminator"))]
    opt = Adam(params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    csi_rng, iq_rng = (np.random.default_rng(s)
                       for s in np.random.SeedSequence([cfg.rng_seed, 1]).spawn(2))
    iq_batches = _BatchCycler(len(x_aux), cfg.batch_size, iq_rng) if dual else None

    n = len(x_main)
    steps_per_epoch = -(-n // cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    initial = mean_loss(model, x_main, y_main)
    history = {"main": [], "aux": [], "total": [], "lr": []}
    loss_fn = SoftmaxCrossEntropy()
    step = 0
    for epoch in range(cfg.epochs):
        perm = csi_rng.permutation(n)
        main_sum = aux_sum = 0.0
        aux_count = 0
        for b in range(steps_per_epoch):
            idx = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            model.zero_grad()
            logits = model.forward("csi", x_main[idx])
            main_sum += loss_fn.forward(logits, one_hot(y_main[idx], spec.n_classes)) * len(idx)
            model.backward("csi", loss_fn.backward())
            if dual:
                jdx = iq_batches.next()
                logits = model.forward("iq", x_aux[jdx])
                aux_sum += loss_fn.forward(logits, one_hot(y_aux[jdx], spec.n_aux_classes)) * len(jdx)
                aux_count += len(jdx)
                model.backward("iq", loss_fn.backward(cfg.lam))
            lr = cosine_lr(step, total_steps, cfg.lr0) if cfg.lr_schedule == "cosine" else cfg.lr0
            opt.step(lr)
            step += 1
        main = main_sum / n
        aux = aux_sum / aux_count if dual else 0.0
        history["main"].append(main)
        history["aux"].append(aux)
        history["total"].append(main + cfg.lam * aux if dual else main)
        history["lr"].append(lr)
        log.debug("epoch %d main %.4f aux %.4f", epoch + 1, main, aux)
        if progress is not None:
            progress(epoch + 1, history)
    return TrainResult(model, history, initial)


def shared_extractor_gradients(model, csi_x, csi_y, iq_x, iq_y, lam):
    """Extractor gradients of one dual step, and the two per-task parts.

    Returns ``(combined, main_only, aux_only)`` dictionaries keyed by
    parameter name, where ``combined`` should equal
    ``main_only + lam * aux_only``.
    """
    spec = model.spec
    xm, ym = encode_iq(csi_x, spec.input_norm), one_hot(_check_labels(csi_y, spec.n_classes, "CSI"), spec.n_classes)
    xa, ya = encode_iq(iq_x, spec.input_norm), one_hot(_check_labels(iq_y, spec.n_aux_classes, "IQ"), spec.n_aux_classes)
    names = [p for p in model.parameters() if p[0].startswith("extractor")]
    loss = SoftmaxCrossEntropy()

    def grads():
        return {name: layer.grads[key].copy() for name, layer, key in names}

    model.zero_grad()
    loss.forward(model.forward("csi", xm), ym)
    model.backward("csi", loss.backward())
    main_only = grads()

    model.zero_grad()
    loss.forward(model.forward("iq", xa), ya)
    model.backward("iq", loss.backward())
    aux_only = grads()

    model.zero_grad()
    loss.forward(model.forward("csi", xm), ym)
    model.backward("csi", loss.backward())
    loss.forward(model.forward("iq", xa), ya)
    model.backward("iq", loss.backward(lam))
    combined = grads()
    model.zero_grad()
    return combined, main_only, aux_only
