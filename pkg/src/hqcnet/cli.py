"""Command-line surface: synth | train | eval | predict | selfcheck.

Every command resolves its configuration (flags > config file > defaults),
writes the resolved tree to <output-dir>/resolved_config.json before doing
any work, then runs. Output directory precedence: --output-dir flag, the
HQCNET_OUTPUT_DIR environment variable, the config file, else runs/<command>.

Exit codes are a stable scripting contract:
    0 success, 1 usage/config error, 2 data or I/O error, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import data as datamod
from . import metrics as metricsmod
from . import model as modelmod
from . import pqc, selfcheck, train
from .autodiff import Tensor
from .errors import ConfigError, DataError, NumericalAbort, UsageError
from .rng import stream

log = logging.getLogger(__name__)

ENV_OUTPUT_DIR = "HQCNET_OUTPUT_DIR"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors by default; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_set(pairs: list[str]) -> dict[str, object]:
    overrides: dict[str, object] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects dotted.key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    return overrides


def _resolve(args, command: str) -> cfgmod.RunConfig:
    cfg = cfgmod.load_file(args.config) if args.config else cfgmod.RunConfig()
    overrides = _parse_set(getattr(args, "set", None))
    for flag, dotted in (("seed", "run.seed"), ("epochs", "run.epochs"),
                         ("batch_size", "run.batch_size"), ("threads", "run.threads"),
                         ("threshold", "run.threshold")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[dotted] = value
    if getattr(args, "data_root", None):
        overrides["data.source"] = "directory"
        overrides["data.root"] = args.data_root
    out_dir = getattr(args, "output_dir", None) or os.environ.get(ENV_OUTPUT_DIR)
    if out_dir:
        overrides["run.output_dir"] = out_dir
    cfg = cfgmod.apply_overrides(cfg, overrides)
    if not cfg.run.output_dir:
        cfg = cfgmod.apply_overrides(cfg, {"run.output_dir": f"runs/{command}"})
    return cfg


def _prepare_output(cfg: cfgmod.RunConfig) -> Path:
    out = Path(cfg.run.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        cfgmod.save_file(cfg, out / "resolved_config.json")
    except OSError as exc:
        raise DataError(f"cannot write to output directory {out}: {exc}")
    return out


def _load_samples(cfg: cfgmod.RunConfig) -> list[datamod.Sample]:
    if cfg.data.source == "synthetic":
        return datamod.synthesize_dataset(cfg.data.n_per_class, cfg.data.patch_size,
                                          cfg.run.seed)
    return datamod.load_directory(cfg.data.root, channels=cfg.data.channels)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cfg = _resolve(args, "synth")
    out = _prepare_output(cfg)
    samples = datamod.synthesize_dataset(cfg.data.n_per_class, cfg.data.patch_size,
                                         cfg.run.seed)
    if cfg.data.expand_positives:
        samples = datamod.expand_positives(samples, cfg.data.expand_positives,
                                           cfg.data.augment, cfg.run.seed)
    train_part, test_part = datamod.split(samples, cfg.data.split)
    test_ids = {id(s) for s in test_part}
    split_of = {i: ("test" if id(s) in test_ids else "train") for i, s in enumerate(samples)}
    rows = datamod.export_dataset(samples, out / "dataset", split_of)
    datamod.write_manifest(rows, out / "manifest.csv")
    n_pos = sum(s.label for s in samples)
    print(f"wrote {len(samples)} samples ({n_pos} positive, {len(samples) - n_pos} negative) "
          f"to {out / 'dataset'}")
    print(f"manifest: {out / 'manifest.csv'} (train {len(train_part)} / test {len(test_part)})")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args, "train")
    out = _prepare_output(cfg)
    quantum = not args.ablation
    mode = "hybrid" if quantum else "classical"
    samples = _load_samples(cfg)
    train_set, val_set = datamod.split(samples, cfg.data.split)
    model = modelmod.HybridModel(cfg.model.backbone, cfg.model.pqc,
                                 stream(cfg.run.seed, "init"), threads=cfg.run.threads)
    if args.dump_circuit:
        print(pqc.describe_circuit(np.zeros(cfg.model.pqc.n_qubits),
                                   pqc.PqcParams(model.theta.data), cfg.model.pqc))
    result = train.fit(model, train_set, val_set, cfg.optim, cfg.run.epochs,
                       cfg.data.augment, cfg.run.seed, batch_size=cfg.run.batch_size,
                       threshold=cfg.run.threshold, quantum=quantum)
    header_base = {"mode": mode, "seed": cfg.run.seed}
    model.load_state_arrays(result.best_state)
    modelmod.save_model(out / "best.ckpt", model, {**header_base, "epoch": result.best_epoch})
    model.load_state_arrays(result.last_state)
    modelmod.save_model(out / "last.ckpt", model, {**header_base, "epoch": cfg.run.epochs})
    train.history_to_csv(result.history, out / "history.csv")
    summary = {
        "mode": mode,
        "epochs": cfg.run.epochs,
        "best_epoch": result.best_epoch,
        "best_val_accuracy": result.best_accuracy,
        "total_seconds": result.total_seconds,
        "final": train.report_to_dict(result.history[-1]) if result.history else None,
        "angle_range": ([model.angle_min, model.angle_max]
                        if quantum and result.history else None),
    }
    train.write_summary(out / "summary.json", summary)
    last = result.history[-1] if result.history else None
    print(f"[{mode}] trained {cfg.run.epochs} epochs; best val accuracy "
          f"{result.best_accuracy:.4f} at epoch {result.best_epoch}"
          + (f"; final val accuracy {last.accuracy:.4f}" if last else ""))
    print(f"outputs in {out}: best.ckpt last.ckpt history.csv summary.json")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args, "eval")
    out = _prepare_output(cfg)
    model, header = modelmod.model_from_checkpoint(args.checkpoint, threads=cfg.run.threads)
    if args.config:
        expected = modelmod.HybridModel(cfg.model.backbone, cfg.model.pqc,
                                        np.random.default_rng(0)).config_header()
        modelmod.check_architecture(header["model"], expected)
    samples = _load_samples(cfg)
    if cfg.data.source == "synthetic":
        _, samples = datamod.split(samples, cfg.data.split)
    quantum = header.get("mode", "hybrid") != "classical"
    report = train.evaluate(model, samples, threshold=cfg.run.threshold, quantum=quantum)
    payload = train.report_to_dict(report)
    payload["n_samples"] = len(samples)
    payload["checkpoint"] = str(args.checkpoint)
    train.write_summary(out / "metrics.json", payload)
    auc = "undefined" if report.auc is None else f"{report.auc:.4f}"
    print(f"evaluated {len(samples)} samples from {cfg.data.source}")
    print(f"accuracy {report.accuracy:.4f}  auc {auc}  f1 {report.f1:.4f}")
    print(f"sensitivity {report.sensitivity:.4f}  specificity {report.specificity:.4f}  "
          f"precision {report.precision:.4f}  recall {report.recall:.4f}")
    print(f"confusion: tp {report.tp}  fp {report.fp}  tn {report.tn}  fn {report.fn}")
    print(f"metrics written to {out / 'metrics.json'}")
    return 0


def cmd_predict(args) -> int:
    from PIL import Image

    cfg = _resolve(args, "predict")
    out = _prepare_output(cfg)
    model, header = modelmod.model_from_checkpoint(args.checkpoint, threads=cfg.run.threads)
    try:
        with Image.open(args.image) as im:
            arr = np.asarray(im.convert(im.mode if im.mode in ("L", "RGB") else "RGB"))
    except OSError as exc:
        raise DataError(f"cannot read image {args.image}: {exc}")
    img = datamod._to_channels(arr, model.backbone_cfg.in_channels)
    size = model.backbone_cfg.input_size
    if img.shape[1:] != (size, size):
        log.warning("resizing %sx%s input to expected %sx%s", img.shape[1], img.shape[2],
                    size, size)
        img = datamod.resize(img, size, size)
    x = Tensor(datamod.normalize(img[None]))
    quantum = header.get("mode", "hybrid") != "classical"
    f = model.features(x)
    if quantum:
        q = model.quantum_features(f)
    else:
        q = Tensor(np.zeros((1, model.pqc_cfg.n_qubits)))
    from . import autodiff as ad

    logit = float(ad.reshape(ad.linear(ad.concat(f, q), model.head_w, model.head_b), (1,)).data[0])
    prob = float(1.0 / (1.0 + np.exp(-logit))) if logit >= 0 else float(
        np.exp(logit) / (1.0 + np.exp(logit)))
    label = int(prob >= cfg.run.threshold)
    qvals = " ".join(f"{v:+.6f}" for v in q.data[0])
    print(f"label: {label} ({'positive' if label else 'negative'})")
    print(f"probability: {prob:.6f}")
    print(f"quantum features: {qvals}")
    train.write_summary(out / "prediction.json", {
        "image": str(args.image), "label": label, "probability": prob,
        "quantum_features": [float(v) for v in q.data[0]],
    })
    return 0


def cmd_selfcheck(args) -> int:
    cfg = _resolve(args, "selfcheck")
    out = _prepare_output(cfg)
    if args.dump_circuit:
        pc = cfg.model.pqc
        print(pqc.describe_circuit(np.zeros(pc.n_qubits), pqc.PqcParams.zeros(pc), pc))
    results = selfcheck.run_selfcheck(shift_perturbation=args.inject_shift_error)
    lines = [r.line() for r in results]
    print("\n".join(lines))
    (out / "selfcheck.txt").write_text("\n".join(lines) + "\n")
    if all(r.passed for r in results):
        print("selfcheck: all checks passed")
        return 0
    failed = ", ".join(r.name for r in results if not r.passed)
    print(f"selfcheck: FAILED ({failed})", file=sys.stderr)
    return 3


# ---------------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser, *, data_flags: bool = True) -> None:
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--output-dir", help=f"artifact directory (or ${ENV_OUTPUT_DIR})")
    sub.add_argument("--seed", type=int, help="run seed")
    sub.add_argument("--threads", type=int, help="worker threads for per-sample fan-out")
    sub.add_argument("--threshold", type=float, help="decision threshold")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override any config key by dotted path, e.g. optim.lr_backbone=1e-4")
    if data_flags:
        sub.add_argument("--data-root", help="dataset directory (switches data.source)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hqcnet",
                     description="hybrid quantum-classical binary image classifier")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = subs.add_parser("synth", help="generate a synthetic dataset directory + manifest")
    _add_common(p, data_flags=False)

    p = subs.add_parser("train", help="train a model and write checkpoints/history")
    _add_common(p)
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--ablation", action="store_true",
                   help="classical-only ablation: quantum path disabled")
    p.add_argument("--dump-circuit", action="store_true",
                   help="print the circuit gate listing before training")

    p = subs.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)

    p = subs.add_parser("predict", help="classify one image")
    _add_common(p, data_flags=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)

    p = subs.add_parser("selfcheck", help="run the numerical oracle suite")
    _add_common(p, data_flags=False)
    p.add_argument("--inject-shift-error", type=float, default=0.0,
                   help="test hook: detune the parameter-shift angle by this amount")
    p.add_argument("--dump-circuit", action="store_true",
                   help="print the default circuit gate listing")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "selfcheck": cmd_selfcheck,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
