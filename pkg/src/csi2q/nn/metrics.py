"""Classification metrics: confusion matrix, accuracy, macro-F1."""

import numpy as np

from ..errors import InvalidArgument


def confusion_matrix(y_true, y_pred, n_classes):
    """``M[i, j]`` counts samples of true class ``i`` predicted as ``j``
    (0-based labels)."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise InvalidArgument("label and prediction arrays differ in shape")
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (y_true, y_pred), 1)
    return m


def accuracy(cm):
    cm = np.asarray(cm)
    return float(np.trace(cm) / cm.sum())


def per_class_f1(cm):
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    return np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f1(cm):
    return float(np.mean(per_class_f1(cm)))


def per_class_accuracy(cm):
    cm = np.asarray(cm, dtype=np.float64)
    actual = cm.sum(axis=1)
    return np.divide(np.diag(cm), actual, out=np.zeros(len(cm)), where=actual > 0)


def summarize(cm):
    return {
        "accuracy": accuracy(cm),
        "macro_f1": macro_f1(cm),
        "per_class_accuracy": per_class_accuracy(cm).tolist(),
        "confusion_matrix": np.asarray(cm).tolist(),
    }


def evaluate(model, x, labels, domain="csi"):
    """Metrics of ``model`` on complex samples ``x`` with 1-based labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise InvalidArgument("empty test set")
    n_classes = model.spec.n_classes if domain == "csi" else model.spec.n_aux_classes
    probs = model.predict(x, domain)
    cm = confusion_matrix(labels - 1, probs.argmax(axis=1), n_classes)
    return summarize(cm)
