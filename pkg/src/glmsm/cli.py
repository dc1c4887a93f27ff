"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
import argparse
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from .data import MANIFEST_NAME, DatasetError, SynthSpec, generate_synthetic, load_dataset, save_dataset
from .model import ARCHITECTURES, ModelFormatError, build_model, load_model, save_model
from .train import TrainConfig, evaluate, format_history, grad_check, random_instance, train

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

TRAIN_DEFAULTS = {
    "arch": "glmsm-softmax",
    "m": 3,
    "p": 3,
    "K": None,
    "epochs": 30,
    "batch": 8,
    "rate": 0.05,
    "decay": 0.95,
    "tau": "fixed:1",
    "activation": "id",
    "repulsion": 0.0,
    "reinforce": False,
    "input": "pca",
    "optimizer": None,
    "init": "random",
    "epsilon": 1e-6,
    "seed": 42,
}

ACTIVATION_NAMES = {"id": "identity", "sqrt": "sqrt"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_int(flag):
    def conv(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} expects an integer, got {text!r}") from None
        if v < 1:
            raise argparse.ArgumentTypeError(f"{flag} must be positive, got {v}")
        return v
    return conv


def _nonneg_float(flag):
    def conv(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} expects a number, got {text!r}") from None
        if not (np.isfinite(v) and v >= 0):
            raise argparse.ArgumentTypeError(f"{flag} must be finite and non-negative, got {text}")
        return v
    return conv


def parse_tau(text):
    """``fixed:<v>`` or ``learn`` / ``learn:<init>`` -> (tau, learnable)."""
    kind, _, val = text.partition(":")
    if kind not in ("fixed", "learn") or (kind == "fixed" and not val):
        raise UsageError(f"--tau expects 'fixed:<v>' or 'learn', got {text!r}")
    try:
        tau = float(val) if val else 1.0
    except ValueError:
        raise UsageError(f"--tau value {val!r} is not a number") from None
    if not (np.isfinite(tau) and tau > 0):
        raise UsageError(f"--tau must be positive, got {tau}")
    return tau, kind == "learn"


def build_parser():
    parser = _Parser(prog="glmsm", description="Learning subspace classifiers on image sets.")
    parser.add_argument("--no-timing", action="store_true", help="suppress timing lines")
    common = _Parser(add_help=False)
    common.add_argument("--no-timing", action="store_true", default=argparse.SUPPRESS,
                        help="suppress timing lines")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic image-set dataset")
    p.add_argument("--d", type=_positive_int("--d"), required=True)
    p.add_argument("--classes", type=_positive_int("--classes"), required=True)
    p.add_argument("--sets-per-class", type=_positive_int("--sets-per-class"), required=True)
    p.add_argument("--n", type=_positive_int("--n"), required=True)
    p.add_argument("--true-dim", type=_positive_int("--true-dim"), required=True)
    p.add_argument("--sigma", type=_nonneg_float("--sigma"), required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common], help="train a subspace classifier")
    p.add_argument("--data", required=True, help="manifest file or dataset directory")
    p.add_argument("--config", help="JSON file of option overrides (flags win)")
    p.add_argument("--arch", choices=sorted(ARCHITECTURES))
    p.add_argument("--m", type=_positive_int("--m"))
    p.add_argument("--p", type=_positive_int("--p"))
    p.add_argument("--K", type=_positive_int("--K"))
    p.add_argument("--epochs", type=_positive_int("--epochs"))
    p.add_argument("--batch", type=_positive_int("--batch"))
    p.add_argument("--rate", type=_nonneg_float("--rate"))
    p.add_argument("--decay", type=_nonneg_float("--decay"))
    p.add_argument("--tau", help="fixed:<v> | learn")
    p.add_argument("--activation", choices=sorted(ACTIVATION_NAMES))
    p.add_argument("--repulsion", type=_nonneg_float("--repulsion"))
    p.add_argument("--reinforce", action="store_const", const=True, default=None)
    p.add_argument("--input", choices=("pca", "ac"))
    p.add_argument("--optimizer", choices=("sgd", "rsgd"))
    p.add_argument("--init", choices=("random", "sm"))
    p.add_argument("--epsilon", type=_nonneg_float("--epsilon"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", parents=[common], help="evaluate a trained model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--tsv", help="also write the confusion matrix as TSV")

    p = sub.add_parser("gradcheck", parents=[common], help="audit analytic gradients with finite differences")
    p.add_argument("--arch", choices=sorted(ARCHITECTURES), default="glmsm-softmax")
    p.add_argument("--d", type=_positive_int("--d"), default=10)
    p.add_argument("--m", type=_positive_int("--m"), default=3)
    p.add_argument("--p", type=_positive_int("--p"), default=3)
    p.add_argument("--K", type=_positive_int("--K"), default=4)
    p.add_argument("--classes", type=_positive_int("--classes"))
    p.add_argument("--batch", type=_positive_int("--batch"), default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--threshold", type=float,
                   help="pass threshold (default 1e-5, or 1e-4 for euclidean architectures)")
    return parser


def _resolve_data(path):
    path = Path(path)
    if path.is_dir() and not (path / MANIFEST_NAME).exists() and (path / "train" / MANIFEST_NAME).exists():
        return path / "train"
    return path


def _train_options(args):
    opts = dict(TRAIN_DEFAULTS)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config file {args.config}: {e}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(cfg) - set(TRAIN_DEFAULTS))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        opts.update(cfg)
    for key in TRAIN_DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            opts[key] = val
    return opts


def cmd_synth(args, out):
    try:
        spec = SynthSpec(args.d, args.classes, args.sets_per_class, args.n,
                         args.true_dim, args.sigma, args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    train_set, test_set = generate_synthetic(spec)
    root = Path(args.out)
    save_dataset(train_set, root / "train")
    save_dataset(test_set, root / "test")
    out(f"wrote {len(train_set) + len(test_set)} sets ({len(train_set)} train, {len(test_set)} test) "
        f"d={spec.d} classes={spec.classes} to {root}")
    return EXIT_OK


def cmd_train(args, out, timing):
    opts = _train_options(args)
    tau, learn_tau = parse_tau(str(opts["tau"]))
    arch = opts["arch"]
    if arch not in ARCHITECTURES:
        raise UsageError(f"unknown architecture {arch!r}")
    mode, head_kind, expected_opt = ARCHITECTURES[arch]
    if opts["optimizer"] is not None and opts["optimizer"] != expected_opt:
        raise UsageError(f"--optimizer {opts['optimizer']} is incompatible with --arch {arch} "
                         f"({mode} references use {expected_opt})")
    if mode != "grassmann" and opts["repulsion"]:
        raise UsageError(f"--repulsion needs orthonormal references; not available for {arch}")
    if opts["activation"] not in ACTIVATION_NAMES:
        raise UsageError(f"--activation must be one of {sorted(ACTIVATION_NAMES)}")
    if not 0 < opts["decay"] <= 1:
        raise UsageError(f"--decay must lie in (0, 1], got {opts['decay']}")
    dataset = load_dataset(_resolve_data(args.data))
    C = dataset.class_count
    K = opts["K"] if opts["K"] is not None else C
    if head_kind == "softmax" and K != C:
        raise UsageError(f"--arch {arch} needs one reference per class: --K {K} but the data has {C} classes")
    model = build_model(arch, dataset.d, C, opts["m"], opts["p"], K, seed=opts["seed"],
                        activation=ACTIVATION_NAMES[opts["activation"]], tau=tau, learn_tau=learn_tau,
                        repulsion=opts["repulsion"], reinforcement=bool(opts["reinforce"]),
                        input_mode=opts["input"], epsilon=opts["epsilon"], init=opts["init"],
                        dataset=dataset if opts["init"] == "sm" else None)
    config = TrainConfig(epochs=opts["epochs"], batch_size=opts["batch"], rate=opts["rate"],
                         rate_decay=opts["decay"], seed=opts["seed"], optimizer=expected_opt)
    if config.rate == 0:
        print("warning: --rate 0 leaves every parameter unchanged", file=sys.stderr)
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        result = train(dataset, model, config)
    elapsed = time.perf_counter() - start
    trained = result.model
    trained.meta = {k: str(opts[k]) for k in ("epochs", "batch", "rate", "decay", "seed", "init")}
    trained.meta["optimizer"] = expected_opt
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    save_model(trained, outdir / "model.txt")
    history = format_history(result.history)
    (outdir / "history.tsv").write_text(history, encoding="utf-8")
    out(history.rstrip("\n"))
    out(f"final train accuracy {result.history[-1].train_acc:.4f}")
    if timing:
        out(f"elapsed {elapsed:.2f}s")
    return EXIT_OK


def format_report(report, dataset_size):
    C = report.confusion.shape[0]
    width = max(6, len(str(report.confusion.max())) + 1)
    lines = [f"accuracy {report.accuracy:.4f}  (n={dataset_size})",
             f"mean_loss {report.mean_loss:.6f}",
             "confusion (rows: true class, columns: predicted class)",
             "true".ljust(6) + "".join(f"p{j}".rjust(width) for j in range(C))]
    for i in range(C):
        lines.append(f"c{i}".ljust(6) + "".join(str(v).rjust(width) for v in report.confusion[i]))
    return lines


def confusion_tsv(confusion):
    C = confusion.shape[0]
    rows = ["true\t" + "\t".join(f"pred_{j}" for j in range(C))]
    rows += [f"{i}\t" + "\t".join(str(v) for v in confusion[i]) for i in range(C)]
    return "\n".join(rows) + "\n"


def cmd_eval(args, out):
    model_path = Path(args.model)
    if not model_path.is_file():
        raise UsageError(f"model file not found: {model_path}")
    model = load_model(model_path)
    dataset = load_dataset(args.data)
    if dataset.d != model.bank.d:
        out(f"error: dataset dimension d={dataset.d} does not match model dimension d={model.bank.d}",
            err=True)
        return EXIT_FAIL
    report = evaluate(dataset, model)
    for line in format_report(report, len(dataset)):
        out(line)
    if args.tsv:
        Path(args.tsv).write_text(confusion_tsv(report.confusion), encoding="utf-8")
    return EXIT_OK


def cmd_gradcheck(args, out):
    mode = ARCHITECTURES[args.arch][0]
    threshold = args.threshold if args.threshold is not None else (1e-5 if mode == "grassmann" else 1e-4)
    classes = args.classes if args.classes is not None else args.K
    if ARCHITECTURES[args.arch][1] == "softmax" and classes != args.K:
        raise UsageError(f"--arch {args.arch} needs --classes equal to --K")
    if max(args.m, args.p) > args.d:
        raise UsageError("--m and --p must not exceed --d")
    Z, model, y = random_instance(args.arch, args.d, args.m, args.p, args.K, classes,
                                  seed=args.seed, batch=args.batch)
    report = grad_check(Z, model, y, step=args.step)
    for line in report.lines():
        out(line)
    verdict = "PASS" if report.passed(threshold) else "FAIL"
    out(f"{verdict} max_rel={report.max_rel:.3e} threshold={threshold:.0e} ({mode} mode)")
    return EXIT_OK if verdict == "PASS" else EXIT_FAIL


def main(argv=None):
    def out(line, err=False):
        print(line, file=sys.stderr if err else sys.stdout)

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "synth":
            return cmd_synth(args, out)
        if args.command == "train":
            return cmd_train(args, out, timing=not args.no_timing)
        if args.command == "eval":
            return cmd_eval(args, out)
        return cmd_gradcheck(args, out)
    except UsageError as e:
        out(str(e), err=True)
        return EXIT_USAGE
    except (DatasetError, ModelFormatError, ValueError, OSError, RuntimeError) as e:
        out(f"error: {e}", err=True)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
