"""``csi2q`` command-line interface.

Subcommands: synth, transform, train, eval, ablate. Exit status is 0 on
success, 1 for runtime or data errors and 2 for usage or configuration
errors.
"""

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import datasets
from .ablation import AblationConfig, format_table, run_ablation
from .errors import ConfigError, Csi2qError, InvalidArgument
from .nn.metrics import evaluate
from .nn.model import ModelSpec, load_parameters, save_parameters
from .nn.train import TrainConfig, train_dual, train_single
from .transform import transform_batch

log = logging.getLogger("csi2q")

CONFIG_VERSION = 1
REPORT_SCHEMA = 1

DEFAULTS = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "synth": {"devices": 10, "samples_per_device": 300, "estimator": "mmse",
              "snr_db_range": [15.0, 25.0], "n_taps": 3, "decay_db_per_tap": 3.0,
              "noise": True},
    "transform": {"skip_cim": False, "epsilon": None},
    "model": {"arch": "tcn", "channels": [32, 32, 64, 64], "kernel": 5, "hidden": 64,
              "input_norm": "none"},
    "train": {"mode": "dual", "lam": 1.0, "lr0": 1e-3, "epochs": 100, "batch_size": 64,
              "lr_schedule": "cosine", "train_fraction": None},
    "ablate": {"train_fraction": 0.8},
}


class UsageError(Exception):
    pass


def _merge(base, override, path="config"):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown key {path}.{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}.{key} must be an object")
            out[key] = _merge(base[key], value, f"{path}.{key}")
        else:
            out[key] = value
    return out


def load_config(path=None):
    """Defaults merged with an optional JSON file; unknown keys are errors."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if raw.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {raw.get('version')!r}")
    return _merge(DEFAULTS, raw)


def _apply_overrides(cfg, args):
    pairs = {
        "seed": ("seed",),
        "devices": ("synth", "devices"), "samples": ("synth", "samples_per_device"),
        "estimator": ("synth", "estimator"), "snr": ("synth", "snr_db_range"),
        "taps": ("synth", "n_taps"),
        "skip_cim": ("transform", "skip_cim"), "epsilon": ("transform", "epsilon"),
        "arch": ("model", "arch"), "channels": ("model", "channels"),
        "kernel": ("model", "kernel"), "hidden": ("model", "hidden"),
        "mode": ("train", "mode"), "lam": ("train", "lam"), "lr0": ("train", "lr0"),
        "epochs": ("train", "epochs"), "batch_size": ("train", "batch_size"),
        "train_fraction": ("train", "train_fraction"),
    }
    for attr, keys in pairs.items():
        value = getattr(args, attr, None)
        if value is None or value is False:
            continue
        node = cfg
        for k in keys[:-1]:
            node = node[k]
        node[keys[-1]] = value
    if getattr(args, "no_noise", False):
        cfg["synth"]["noise"] = False
    if args.command == "ablate" and args.train_fraction is not None:
        cfg["ablate"]["train_fraction"] = args.train_fraction
    return cfg


def _validate(cfg):
    s = cfg["synth"]
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(s["devices"], int) or s["devices"] < 2:
        raise ConfigError("synth.devices must be an integer >= 2")
    if not isinstance(s["samples_per_device"], int) or s["samples_per_device"] < 1:
        raise ConfigError("synth.samples_per_device must be an integer >= 1")
    if s["estimator"] not in ("ls", "mmse"):
        raise ConfigError("synth.estimator must be 'ls' or 'mmse'")
    if len(s["snr_db_range"]) != 2 or s["snr_db_range"][0] > s["snr_db_range"][1]:
        raise ConfigError("synth.snr_db_range must be [low, high]")
    if cfg["model"]["arch"] not in ("tcn", "cnn"):
        raise ConfigError("model.arch must be 'tcn' or 'cnn'")
    if len(cfg["model"]["channels"]) != 4 or min(cfg["model"]["channels"]) < 1:
        raise ConfigError("model.channels must list four positive widths")
    if cfg["model"]["input_norm"] not in ("rms", "none"):
        raise ConfigError("model.input_norm must be 'rms' or 'none'")
    if cfg["train"]["mode"] not in ("dual", "single"):
        raise ConfigError("train.mode must be 'dual' or 'single'")
    for key in ("train_fraction",):
        frac = cfg["train"][key]
        if frac is not None and not 0 < frac < 1:
            raise ConfigError("train.train_fraction must lie in (0, 1)")
    if not 0 < cfg["ablate"]["train_fraction"] < 1:
        raise ConfigError("ablate.train_fraction must lie in (0, 1)")
    train_config(cfg)


def train_config(cfg):
    t = cfg["train"]
    try:
        return TrainConfig(lam=t["lam"], lr0=t["lr0"], epochs=t["epochs"],
                           batch_size=t["batch_size"], rng_seed=cfg["seed"],
                           lr_schedule=t["lr_schedule"])
    except InvalidArgument as exc:
        raise ConfigError(str(exc)) from None


def model_spec(cfg, n_classes, n_aux, csi_input_len):
    m = cfg["model"]
    return ModelSpec.named(m["arch"], n_classes, n_aux, csi_input_len=csi_input_len,
                           input_norm=m["input_norm"], channels=tuple(m["channels"]),
                           kernel=m["kernel"], hidden=m["hidden"])


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _emit(args, text):
    if not args.quiet:
        print(text)


def _load(path, what):
    if path is None:
        raise ConfigError(f"missing {what} dataset path")
    return datasets.load(path)


# ----------------------------------------------------------------- commands


def cmd_synth(cfg, args):
    s = cfg["synth"]
    channel = datasets.ChannelConfig(
        n_taps=s["n_taps"], decay_db_per_tap=s["decay_db_per_tap"],
        snr_db_range=tuple(s["snr_db_range"]) if s["noise"] else None)
    iq, csi = datasets.generate_synthetic_pair(
        s["devices"], s["samples_per_device"], channel, s["estimator"], seed=cfg["seed"])
    datasets.save(iq, args.out / "iq.c2q")
    datasets.save(csi, args.out / "csi.c2q")
    _emit(args, f"wrote {len(iq)} IQ and {len(csi)} CSI samples "
                f"({s['devices']} devices x {s['samples_per_device']}) to {args.out}")
    return 0


def cmd_transform(cfg, args):
    src = _load(args.input, "CSI")
    if src.kind != "csi":
        raise ConfigError(f"transform needs a csi dataset, got {src.kind!r}")
    t = cfg["transform"]
    feats, keep = transform_batch(src.data, epsilon=t["epsilon"], skip_cim=bool(t["skip_cim"]))
    meta = dict(src.meta, transform={"skip_cim": bool(t["skip_cim"]), "epsilon": t["epsilon"]})
    out = datasets.LabeledSampleSet("feature", src.labels[keep], feats, src.device_count, meta)
    datasets.save(out, args.out / "features.c2q")
    dropped = int((~keep).sum())
    _emit(args, f"wrote {len(out)} feature vectors to {args.out / 'features.c2q'}; "
                f"{dropped} degenerate inputs dropped")
    return 0


def cmd_train(cfg, args):
    csi = _load(args.csi, "CSI")
    if csi.kind not in ("csi", "feature"):
        raise ConfigError(f"--csi must hold csi or feature samples, got {csi.kind!r}")
    mode = cfg["train"]["mode"]
    iq = None
    if mode == "dual":
        if args.iq is None:
            raise ConfigError("dual mode needs an IQ dataset (--iq)")
        iq = _load(args.iq, "IQ")
        if iq.kind != "iq":
            raise ConfigError(f"--iq must hold iq samples, got {iq.kind!r}")
    frac = cfg["train"]["train_fraction"]
    if frac is not None:
        csi, test = datasets.split(csi, frac, cfg["seed"])
        datasets.save(csi, args.out / "train.c2q")
        datasets.save(test, args.out / "test.c2q")
        if iq is not None:
            iq, _ = datasets.split(iq, frac, cfg["seed"])
    tcfg = train_config(cfg)
    n_aux = iq.device_count if iq is not None else 0
    spec = model_spec(cfg, csi.device_count, n_aux, csi.data.shape[1])

    def progress(epoch, history):
        log.info("epoch %d/%d  loss %.4f", epoch, tcfg.epochs, history["total"][-1])

    if mode == "dual":
        result = train_dual(csi.data, csi.labels, iq.data, iq.labels, spec, tcfg, progress)
    else:
        result = train_single(csi.data, csi.labels, spec, tcfg, progress)
    save_parameters(result.model, args.out / "params.bin",
                    {"seed": cfg["seed"], "epochs": tcfg.epochs, "mode": mode,
                     "train_config": tcfg.to_dict(), "input_kind": csi.kind})
    _write_json(args.out / "history.json",
                {"schema_version": REPORT_SCHEMA, "initial_loss": result.initial_loss,
                 **result.history})
    _emit(args, f"final train loss {result.history['main'][-1]:.6f}")
    return 0


def cmd_eval(cfg, args):
    if args.params is None:
        raise ConfigError("missing --params")
    model, manifest = load_parameters(args.params)
    data = _load(args.data, "test")
    if data.data.shape[1] != model.spec.csi_input_len:
        raise ConfigError(f"model expects length-{model.spec.csi_input_len} inputs, "
                          f"dataset has {data.data.shape[1]}")
    if data.device_count > model.spec.n_classes:
        raise ConfigError("dataset has more devices than the model has classes")
    metrics = evaluate(model, data.data, data.labels)
    report = {"schema_version": REPORT_SCHEMA, "n_samples": len(data), **metrics}
    _write_json(args.out / "eval.json", report)
    lines = [f"accuracy  {100 * metrics['accuracy']:.2f}%", f"macro-F1  {metrics['macro_f1']:.4f}",
             "per-class accuracy:"]
    lines += [f"  device {i + 1:3d}  {100 * a:6.2f}%"
              for i, a in enumerate(metrics["per_class_accuracy"])]
    _emit(args, "\n".join(lines))
    return 0


def cmd_ablate(cfg, args):
    iq = _load(args.iq, "IQ")
    csi = _load(args.csi, "CSI")
    if iq.kind != "iq" or csi.kind != "csi":
        raise ConfigError("ablate needs an iq and a csi dataset")
    if not np.array_equal(iq.labels, csi.labels):
        raise ConfigError("IQ and CSI datasets are not packet-aligned")
    m = cfg["model"]
    acfg = AblationConfig(arch=m["arch"], channels=tuple(m["channels"]), kernel=m["kernel"],
                          hidden=m["hidden"], input_norm=m["input_norm"],
                          train_fraction=cfg["ablate"]["train_fraction"], split_seed=cfg["seed"],
                          train=train_config(cfg), epsilon=cfg["transform"]["epsilon"])
    report = run_ablation(iq, csi, acfg)
    report["config"] = cfg
    _write_json(args.out / "ablation.json", report)
    _emit(args, format_table(report))
    return 0


COMMANDS = {"synth": cmd_synth, "transform": cmd_transform, "train": cmd_train,
            "eval": cmd_eval, "ablate": cmd_ablate}


# ------------------------------------------------------------------ parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _global_flags(p, suppress):
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", type=Path, default=default, help="JSON run configuration")
    p.add_argument("--seed", type=int, default=default, help="master seed")
    p.add_argument("--out", type=Path, default=default, help="output directory (default .)")
    p.add_argument("--quiet", action="store_true",
                   default=argparse.SUPPRESS if suppress else False)


def _floats2(text):
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected LOW,HIGH")
    return [float(v) for v in parts]


def _ints(text):
    return [int(v) for v in text.split(",")]


def build_parser():
    p = _Parser(prog="csi2q", description="Synthetic CSI fingerprinting pipeline.")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        _global_flags(sp, suppress=True)
        return sp

    def model_flags(sp):
        sp.add_argument("--arch", choices=["tcn", "cnn"])
        sp.add_argument("--channels", type=_ints, help="four widths, e.g. 32,32,64,64")
        sp.add_argument("--kernel", type=int)
        sp.add_argument("--hidden", type=int)
        sp.add_argument("--lam", type=float, help="auxiliary loss weight")
        sp.add_argument("--lr0", type=float)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--train-fraction", type=float)

    sp = command("synth", "generate a paired IQ/CSI dataset")
    sp.add_argument("--devices", type=int)
    sp.add_argument("--samples", type=int, help="samples per device")
    sp.add_argument("--estimator", choices=["ls", "mmse"])
    sp.add_argument("--snr", type=_floats2, help="per-packet SNR range in dB, LOW,HIGH")
    sp.add_argument("--taps", type=int, help="Rayleigh taps per channel")
    sp.add_argument("--no-noise", action="store_true")

    sp = command("transform", "CIM + TDSG over a CSI dataset")
    sp.add_argument("input", type=Path)
    sp.add_argument("--skip-cim", action="store_true")
    sp.add_argument("--epsilon", type=float, help="absolute degeneracy guard")

    sp = command("train", "train a classifier")
    sp.add_argument("--csi", type=Path, required=True, help="csi or feature dataset")
    sp.add_argument("--iq", type=Path, help="IQ dataset (dual mode)")
    sp.add_argument("--mode", choices=["dual", "single"])
    model_flags(sp)

    sp = command("eval", "evaluate trained parameters on a dataset")
    sp.add_argument("--params", type=Path, required=True)
    sp.add_argument("--data", type=Path, required=True)

    sp = command("ablate", "four-arm ablation")
    sp.add_argument("--iq", type=Path, required=True)
    sp.add_argument("--csi", type=Path, required=True)
    sp.add_argument("--epsilon", type=float)
    model_flags(sp)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    if args.out is None:
        args.out = Path(".")
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        _validate(cfg)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, InvalidArgument) as exc:
        print(f"csi2q: configuration error: {exc}", file=sys.stderr)
        return 2
    except (Csi2qError, OSError, ValueError) as exc:
        print(f"csi2q: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
