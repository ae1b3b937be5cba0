"""Dual-task network: shared extractor, CSI classifier and IQ discriminator.

Inputs are complex sequences encoded as real arrays with an I and a Q
channel, stored channels-last as ``(length, 2)``. A per-domain input stem
maps each domain to the extractor's ``(320, 2)`` input: the identity for
320-point inputs, or a dense adapter for raw 52-subcarrier CSI.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, FormatError, InvalidArgument
from .layers import (Conv1d, Dense, GlobalAvgPool, MaxPool1d, ReLU, Reshape,
                     Sequential, softmax)

EXTRACTOR_INPUT = (320, 2)
PARAM_FORMAT_VERSION = 1


def encode_iq(x, norm="none"):
    """Complex ``(n, length)`` -> real ``(n, length, 2)`` (I, Q channels).

    ``norm="rms"`` scales every sample to unit mean power first.
    """
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim == 1:
        x = x[None, :]
    if norm == "rms":
        power = np.mean(np.abs(x) ** 2, axis=1, keepdims=True)
        x = x / np.sqrt(np.where(power > 0, power, 1.0))
    elif norm != "none":
        raise InvalidArgument(f"unknown input normalisation {norm!r}")
    return np.stack([x.real, x.imag], axis=-1)


@dataclass
class ModelSpec:
    n_classes: int
    n_aux_classes: int = 0
    extractor: list = field(default_factory=list)
    classifier_widths: list = field(default_factory=lambda: [64])
    discriminator_widths: list = field(default_factory=lambda: [64])
    csi_input_len: int = 320
    iq_input_len: int = 320
    input_norm: str = "none"

    def __post_init__(self):
        if self.n_classes < 1:
            raise InvalidArgument("n_classes must be >= 1")
        if self.n_aux_classes < 0:
            raise InvalidArgument("n_aux_classes must be >= 0")

    @classmethod
    def tcn(cls, n_classes, n_aux_classes=0, channels=(32, 32, 64, 64), kernel=5,
            hidden=64, csi_input_len=320):
        """Four dilated causal convolutions (dilations 1/2/4/8), max-pool
        after the second and fourth, global average pooling."""
        layers = []
        for i, ch in enumerate(channels):
            layers.append({"type": "conv1d", "out": ch, "kernel": kernel, "stride": 1,
                           "dilation": 2 ** i, "causal": True})
            layers.append({"type": "relu"})
            if i % 2 == 1:
                layers.append({"type": "maxpool", "size": 2})
        layers.append({"type": "gap"})
        return cls(n_classes, n_aux_classes, layers, [hidden], [hidden], csi_input_len)

    @classmethod
    def cnn(cls, n_classes, n_aux_classes=0, channels=(32, 32, 64, 64), kernel=5,
            hidden=64, csi_input_len=320):
        layers = []
        for i, ch in enumerate(channels):
            layers.append({"type": "conv1d", "out": ch, "kernel": kernel, "stride": 1,
                           "dilation": 1, "causal": False})
            layers.append({"type": "relu"})
            if i % 2 == 1:
                layers.append({"type": "maxpool", "size": 2})
        layers.append({"type": "gap"})
        return cls(n_classes, n_aux_classes, layers, [hidden], [hidden], csi_input_len)

    @classmethod
    def named(cls, arch, n_classes, n_aux_classes=0, csi_input_len=320, input_norm="none", **kw):
        try:
            factory = {"tcn": cls.tcn, "cnn": cls.cnn}[arch]
        except KeyError:
            raise ConfigError(f"unknown architecture {arch!r}") from None
        spec = factory(n_classes, n_aux_classes, csi_input_len=csi_input_len, **kw)
        spec.input_norm = input_norm
        return spec

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _build_stem(input_len, rng):
    if input_len == EXTRACTOR_INPUT[0]:
        return Sequential([])
    return Sequential([
        Reshape((2 * input_len,)),
        Dense(2 * input_len, EXTRACTOR_INPUT[0] * EXTRACTOR_INPUT[1], rng=rng),
        Reshape(EXTRACTOR_INPUT),
    ])


def _build_extractor(desc, rng):
    layers = []
    shape = EXTRACTOR_INPUT
    for d in desc:
        kind = d["type"]
        if kind == "conv1d":
            layer = Conv1d(shape[1], d["out"], d["kernel"], d.get("stride", 1),
                           d.get("dilation", 1), d.get("causal", False), rng=rng)
        elif kind == "relu":
            layer = ReLU()
        elif kind == "maxpool":
            layer = MaxPool1d(d.get("size", 2))
        elif kind == "gap":
            layer = GlobalAvgPool()
        else:
            raise ConfigError(f"unknown extractor layer {kind!r}")
        layers.append(layer)
        shape = layer.output_shape(shape)
    if len(shape) != 1:
        raise ConfigError("extractor must end in a flat feature vector (add a 'gap' layer)")
    return Sequential(layers), shape[0]


def _build_head(n_in, widths, n_out, rng):
    layers = []
    for w in widths:
        layers += [Dense(n_in, w, rng=rng), ReLU()]
        n_in = w
    layers.append(Dense(n_in, n_out, rng=rng))
    return Sequential(layers)


class DualTaskModel:
    """Stems, extractor ``E``, classifier ``C`` and discriminator ``D``.

    Every component draws its initial weights from its own seeded stream,
    so the classifier path is initialised identically whether or not a
    discriminator exists.
    """

    COMPONENTS = ("csi_stem", "iq_stem", "extractor", "classifier", "discriminator")

    def __init__(self, spec, seed=0):
        self.spec = spec
        streams = [np.random.default_rng(s)
                   for s in np.random.SeedSequence(seed).spawn(len(self.COMPONENTS))]
        self.csi_stem = _build_stem(spec.csi_input_len, streams[0])
        self.iq_stem = _build_stem(spec.iq_input_len, streams[1])
        self.extractor, n_feat = _build_extractor(spec.extractor, streams[2])
        self.classifier = _build_head(n_feat, spec.classifier_widths, spec.n_classes, streams[3])
        self.discriminator = None
        if spec.n_aux_classes > 0:
            self.discriminator = _build_head(
                n_feat, spec.discriminator_widths, spec.n_aux_classes, streams[4])

    def components(self):
        return [(name, getattr(self, name)) for name in self.COMPONENTS
                if getattr(self, name) is not None]

    def _path(self, domain):
        if domain == "csi":
            return self.csi_stem, self.classifier, self.spec.csi_input_len
        if domain == "iq":
            if self.discriminator is None:
                raise InvalidArgument("model has no IQ discriminator")
            return self.iq_stem, self.discriminator, self.spec.iq_input_len
        raise InvalidArgument(f"unknown domain {domain!r}")

    def forward(self, domain, x):
        """Logits for encoded inputs ``x`` of shape ``(batch, length, 2)``."""
        stem, head, length = self._path(domain)
        if x.ndim != 3 or x.shape[1:] != (length, 2):
            raise InvalidArgument(f"{domain} input must be (batch, {length}, 2), got {x.shape}")
        return head.forward(self.extractor.forward(stem.forward(x)))

    def backward(self, domain, grad):
        stem, head, _ = self._path(domain)
        stem.backward(self.extractor.backward(head.backward(grad)))

    def zero_grad(self):
        for _, comp in self.components():
            comp.zero_grad()

    def parameters(self):
        """``(qualified_name, layer, key)`` in declaration order."""
        out = []
        for cname, comp in self.components():
            for i, layer in enumerate(comp.layers):
                for key in layer.params:
                    out.append((f"{cname}.{i}.{key}", layer, key))
        return out

    def state(self):
        return {name: layer.params[key] for name, layer, key in self.parameters()}

    def predict(self, x, domain="csi", batch_size=256):
        """Class probabilities for complex samples ``x`` (``(n, length)``)."""
        enc = encode_iq(x, self.spec.input_norm)
        out = []
        for i in range(0, len(enc), batch_size):
            out.append(softmax(self.forward(domain, enc[i:i + batch_size])))
        return np.concatenate(out, axis=0)


def predict(model, sample, domain="csi"):
    """Probability vector for one complex sample."""
    return model.predict(np.asarray(sample)[None, :], domain)[0]


# ------------------------------------------------------- parameter store


def save_parameters(model, path, manifest_extra=None):
    """Write ``path`` (raw little-endian float64 blocks in declaration
    order) and ``path.json`` (architecture, layout, run metadata)."""
    path = Path(path)
    layout = []
    offset = 0
    with open(path, "wb") as fh:
        for name, layer, key in model.parameters():
            arr = np.ascontiguousarray(layer.params[key], dtype="<f8")
            fh.write(arr.tobytes())
            layout.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.nbytes
    manifest = {"format_version": PARAM_FORMAT_VERSION, "model_spec": model.spec.to_dict(),
                "layout": layout, "total_bytes": offset}
    manifest.update(manifest_extra or {})
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_parameters(path):
    path = Path(path)
    try:
        manifest = json.loads(Path(str(path) + ".json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read parameter manifest: {exc}") from None
    if manifest.get("format_version") != PARAM_FORMAT_VERSION:
        raise FormatError(f"unsupported parameter format {manifest.get('format_version')!r}")
    blob = path.read_bytes()
    if len(blob) != manifest["total_bytes"]:
        raise FormatError(
            f"parameter file has {len(blob)} bytes, manifest expects {manifest['total_bytes']}",
            offset=len(blob))
    model = DualTaskModel(ModelSpec.from_dict(manifest["model_spec"]))
    entries = {e["name"]: e for e in manifest["layout"]}
    params = model.parameters()
    if set(entries) != {name for name, _, _ in params}:
        raise ConfigError("parameter layout does not match the architecture")
    for name, layer, key in params:
        e = entries[name]
        n = int(np.prod(e["shape"]))
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=e["offset"])
        if tuple(e["shape"]) != layer.params[key].shape:
            raise ConfigError(f"shape mismatch for {name}")
        layer.params[key] = arr.reshape(e["shape"]).astype(np.float64)
    return model, manifest
