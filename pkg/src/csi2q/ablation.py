"""Four-arm ablation: CSI2Q, TDSG + ALIQ, ALIQ and plain CSI."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .datasets import LabeledSampleSet, split
from .nn.metrics import evaluate
from .nn.model import ModelSpec
from .nn.train import TrainConfig, train_dual, train_single
from .signal import DEFAULT_TIMING
from .transform import transform_batch

log = logging.getLogger(__name__)

# (name, use_cim, use_tdsg, use_aux)
ARMS = (
    ("CSI2Q", True, True, True),
    ("TDSG + ALIQ", False, True, True),
    ("ALIQ", False, False, True),
    ("CSI", False, False, False),
)


@dataclass
class AblationConfig:
    arch: str = "tcn"
    channels: tuple = (32, 32, 64, 64)
    kernel: int = 5
    hidden: int = 64
    input_norm: str = "none"
    train_fraction: float = 0.8
    split_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    epsilon: float = None


def arm_inputs(csi, use_cim, use_tdsg, epsilon=None, timing=DEFAULT_TIMING):
    """Classifier inputs for one arm and the mask of rows kept."""
    if not use_tdsg:
        return csi.data, np.ones(len(csi), dtype=bool)
    return transform_batch(csi.data, timing, epsilon, skip_cim=not use_cim)


def model_spec_for(cfg, n_classes, n_aux, csi_input_len):
    return ModelSpec.named(cfg.arch, n_classes, n_aux, csi_input_len=csi_input_len,
                           input_norm=cfg.input_norm, channels=tuple(cfg.channels),
                           kernel=cfg.kernel, hidden=cfg.hidden)


def run_arm(name, use_cim, use_tdsg, use_aux, csi_train, csi_test, iq_train, cfg,
            timing=DEFAULT_TIMING):
    x_tr, keep_tr = arm_inputs(csi_train, use_cim, use_tdsg, cfg.epsilon, timing)
    x_te, keep_te = arm_inputs(csi_test, use_cim, use_tdsg, cfg.epsilon, timing)
    y_tr, y_te = csi_train.labels[keep_tr], csi_test.labels[keep_te]
    n_aux = iq_train.device_count if use_aux else 0
    spec = model_spec_for(cfg, csi_train.device_count, n_aux, x_tr.shape[1])
    log.info("arm %s: %d train / %d test samples", name, len(y_tr), len(y_te))
    if use_aux:
        result = train_dual(x_tr, y_tr, iq_train.data, iq_train.labels, spec, cfg.train)
    else:
        result = train_single(x_tr, y_tr, spec, cfg.train)
    metrics = evaluate(result.model, x_te, y_te)
    return {
        "arm": name,
        "cim": use_cim, "tdsg": use_tdsg, "aliq": use_aux,
        "degenerate_dropped": int((~keep_tr).sum() + (~keep_te).sum()),
        "metrics": metrics,
        "history": result.history,
        "initial_loss": result.initial_loss,
    }


def run_ablation(iq, csi, cfg, timing=DEFAULT_TIMING, arms=ARMS):
    """Train and evaluate every arm on identical stratified splits.

    ``iq`` and ``csi`` must be packet-aligned (same labels in the same
    order); both are split with the same seed so the auxiliary IQ data never
    contains test packets.
    """
    if not isinstance(iq, LabeledSampleSet) or not isinstance(csi, LabeledSampleSet):
        raise TypeError("expected LabeledSampleSet inputs")
    csi_train, csi_test = split(csi, cfg.train_fraction, cfg.split_seed)
    iq_train, _ = split(iq, cfg.train_fraction, cfg.split_seed)
    results = [run_arm(*arm, csi_train, csi_test, iq_train, cfg, timing) for arm in arms]
    return {
        "schema_version": 1,
        "train_fraction": cfg.train_fraction,
        "n_train": len(csi_train),
        "n_test": len(csi_test),
        "arms": results,
    }


def format_table(report):
    """Plain-text table: one column per arm, accuracy and F1 rows."""
    names = [r["arm"] for r in report["arms"]]
    width = max(12, *(len(n) + 2 for n in names))
    head = "Method".ljust(10) + "".join(n.center(width) for n in names)
    acc = "Accuracy".ljust(10) + "".join(
        f"{100 * r['metrics']['accuracy']:.2f}%".center(width) for r in report["arms"])
    f1 = "F1 Score".ljust(10) + "".join(
        f"{r['metrics']['macro_f1']:.2f}".center(width) for r in report["arms"])
    rule = "-" * len(head)
    return "\n".join([rule, head, rule, acc, f1, rule])
