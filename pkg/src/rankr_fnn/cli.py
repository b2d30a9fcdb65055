"""Command-line front end: ``rankr-fnn <subcommand> [options]``.

Every subcommand accepts ``--config FILE``, a plain-text file of
``key=value`` lines (``#`` starts a comment).  Keys are option names with
dashes or underscores; explicit flags win over the file.

Exit codes: 0 success, 1 a check did not pass, 2 invalid input or
configuration, 3 runtime failure (for example a diverged training run).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .data import LabeledPatchSet, add_noise, save_patch_set, split_per_class, synth
from .equivalence import Fcfnn, fcfnn_forward, fcfnn_to_rankr, verify_equivalence
from .experiment import (
    BASELINE_NOTE,
    ExperimentSpec,
    compare_models,
    load_dataset,
    param_table,
    read_aggregate,
    run_experiment,
    write_comparison,
    write_param_table,
)
from .gradcheck import run_gradcheck
from .model import ModelConfig, param_count
from .serialize import load_any, save_fcfnn, save_model
from .training import TrainConfig, TrainingDiverged, evaluate, init_weights, train

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID = 2
EXIT_RUNTIME = 3

log = logging.getLogger("rankr_fnn")


class ConfigError(ValueError):
    pass


def int_tuple(text: str) -> tuple[int, ...]:
    """``"5,5,8"`` or ``"5x5x8"`` to ``(5, 5, 8)``."""
    parts = [p for p in text.replace("x", ",").replace(" ", ",").split(",") if p]
    try:
        out = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return out


def read_config(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file {path} not found")
    out = {}
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _apply_config(parser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config", "command")}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None:
            raise ConfigError(f"unknown config key {key!r} for this subcommand")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            low = raw.lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
            defaults[key] = low in ("1", "true", "yes")
            continue
        try:
            val = action.type(raw) if action.type else raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}") from None
        if action.choices is not None and val not in action.choices:
            raise ConfigError(f"{key}: {val!r} is not one of {sorted(action.choices)}")
        defaults[key] = val
        action.required = False
    parser.set_defaults(**defaults)


# ---------------------------------------------------------------------------
# shared option groups


def _add_data_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="patch set (.npz) or cube header (.hdr); synthetic data when omitted")
    p.add_argument("--patch-size", type=int, default=5)
    p.add_argument("--synth-seed", type=int, default=42)
    p.add_argument("--synth-n-per-class", type=int, default=80)
    p.add_argument("--synth-shape", type=int_tuple, default=(5, 5, 8))
    p.add_argument("--synth-classes", type=int, default=3)


def _add_model_options(p: argparse.ArgumentParser, multi_rank: bool = False) -> None:
    if multi_rank:
        p.add_argument("--ranks", type=int_tuple, default=(1, 2, 3, 4, 5))
    else:
        p.add_argument("--rank", type=int, default=1)
    p.add_argument("--hidden", type=int, default=75)
    p.add_argument("--activation", choices=sorted(K.ACTIVATIONS), default="sigmoid")
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--mode", choices=["alternating", "joint"], default="alternating")


def _dataset(args) -> LabeledPatchSet:
    if args.data:
        return load_dataset(args.data, args.patch_size)
    return synth(args.synth_seed, args.synth_n_per_class, args.synth_shape, args.synth_classes)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    data = _dataset(args)
    if args.noise > 0:
        data = add_noise(data, args.noise, args.seed)
    if args.alpha is not None:
        train_set, test_set = split_per_class(data, args.alpha, args.seed)
    else:
        train_set, test_set = data, None
    cfg = ModelConfig(data.sample_shape, args.rank, args.hidden, data.n_classes, args.activation, args.seed)
    print(f"Rank-{cfg.rank} FNN: input_shape={cfg.input_shape} Q={cfg.hidden} C={cfg.classes} "
          f"params={param_count(cfg)} backend={K.backend()}")
    print(f"train={len(train_set)} test={len(test_set) if test_set is not None else 0}")
    tcfg = TrainConfig(args.learning_rate, args.epochs, args.tol, args.mode, seed=args.seed)

    def show(epoch, loss, acc, test_acc):
        if not args.quiet:
            extra = "" if test_acc is None else f" test_acc={test_acc:.4f}"
            print(f"epoch {epoch:4d} nll={loss:.6f} train_acc={acc:.4f}{extra}")

    rec = train(init_weights(cfg), train_set, tcfg, observer=show, test_data=test_set)
    final = rec.final
    print(f"done: epochs={final.epoch} nll={final.train_nll:.6f} train_acc={final.train_acc:.4f}"
          + ("" if final.test_acc is None else f" test_acc={final.test_acc:.4f}")
          + f" elapsed={rec.elapsed:.2f}s")
    if args.out:
        save_model(rec.model, args.out)
        print(f"model written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_any(args.model)
    data = _dataset(args)
    if isinstance(model, Fcfnn):
        p = fcfnn_forward(data.patches, model, batch=True)
        loss = float(-np.sum(np.log(np.maximum(p[np.arange(len(data)), data.labels], 1e-300))))
        acc = float(np.mean(np.argmax(p, axis=1) == data.labels))
        print(f"FCFNN: input_dim={model.input_dim} Q={model.hidden} C={model.classes} "
              f"params={model.hidden_weights.size + model.output_weights.size}")
    else:
        loss, acc = evaluate(model, data)
        print(f"Rank-{model.config.rank} FNN: Q={model.config.hidden} C={model.config.classes} "
              f"params={model.n_params}")
    print(f"samples={len(data)} nll={loss!r} accuracy={acc!r}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    spec = ExperimentSpec(
        data=args.data,
        synth_seed=args.synth_seed,
        synth_n_per_class=args.synth_n_per_class,
        synth_shape=args.synth_shape,
        synth_classes=args.synth_classes,
        patch_size=args.patch_size,
        ranks=args.ranks,
        hidden=args.hidden,
        alpha=args.alpha,
        noise=args.noise,
        runs=args.runs,
        checkpoints=args.checkpoints,
        max_epochs=args.max_epochs,
        base_seed=args.base_seed,
        out_dir=args.out_dir,
        learning_rate=args.learning_rate,
        activation=args.activation,
        mode=args.mode,
    )
    print(BASELINE_NOTE)
    agg = run_experiment(spec, echo=None if args.quiet else print)
    print(agg.to_csv(), end="")
    print(f"results written to {spec.out_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    rows = compare_models(read_aggregate(args.a), read_aggregate(args.b), args.alpha_sig)
    write_comparison(rows, args.out)
    print(Path(args.out).read_text(), end="")
    return EXIT_OK


def cmd_param_table(args) -> int:
    print(f"# {BASELINE_NOTE}")
    print(write_param_table(param_table(ranks=args.ranks, hidden=args.hidden), args.out), end="")
    return EXIT_OK


def cmd_convert_fcfnn(args) -> int:
    if args.fcfnn:
        src = load_any(args.fcfnn)
        if not isinstance(src, Fcfnn):
            raise ValueError(f"{args.fcfnn} holds a Rank-R model, not an FCFNN")
    else:
        size = int(np.prod(args.shape))
        src = Fcfnn.random(size, args.hidden, args.classes, args.seed, args.activation)
        if args.save_source:
            save_fcfnn(src, args.save_source)
    model = fcfnn_to_rankr(src, args.shape)
    print(f"FCFNN params={src.hidden_weights.size + src.output_weights.size} -> "
          f"Rank-{model.config.rank} FNN params={model.n_params}")
    report = verify_equivalence(src, model, args.trials, args.seed)
    print(f"max_abs_gap={report.max_abs_gap!r} over {report.trials} inputs: {'PASS' if report.passed else 'FAIL'}")
    if args.out:
        save_model(model, args.out)
        print(f"model written to {args.out}")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_gradcheck(args) -> int:
    case = {k: getattr(args, k) for k in ("shape", "rank", "hidden", "classes", "samples", "activation")}
    report = run_gradcheck(args.trials, args.seed, args.step, args.tol,
                           **{k: v for k, v in case.items() if v is not None})
    print(f"trials={report.trials} max_rel_err factor={report.max_factor_error:.3e} "
          f"output={report.max_output_error:.3e} tol={report.tol:g}: {'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_synth_data(args) -> int:
    data = synth(args.seed, args.n_per_class, args.shape, args.classes, args.noise_std)
    save_patch_set(data, args.out)
    print(f"{len(data)} samples of shape {data.sample_shape}, {data.n_classes} classes -> {args.out}")
    return EXIT_OK


def cmd_noise(args) -> int:
    data = _dataset(args)
    noisy = add_noise(data, args.level, args.seed)
    save_patch_set(noisy, args.out)
    print(f"level={args.level} seed={args.seed}: {len(noisy)} samples -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; explicit flags override it")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rankr-fnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train one Rank-R FNN")
    _add_data_options(p)
    _add_model_options(p)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--alpha", type=int, help="training samples per class; train on everything when omitted")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the trained model here")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="loss and accuracy of a saved model")
    p.add_argument("--model", required=True)
    _add_data_options(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", parents=[common], help="seeded multi-run experiment with CSV output")
    _add_data_options(p)
    _add_model_options(p, multi_rank=True)
    p.add_argument("--alpha", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--checkpoints", type=int_tuple, default=(50, 500))
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--out-dir", default="results")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("compare", parents=[common], help="significance tests between two aggregate CSVs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--alpha-sig", type=float, default=0.05)
    p.add_argument("--out", default="compare.csv")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("param-table", parents=[common], help="trainable parameter counts")
    p.add_argument("--ranks", type=int_tuple, default=(1, 2, 3, 4, 5))
    p.add_argument("--hidden", type=int, default=75)
    p.add_argument("--out")
    p.set_defaults(func=cmd_param_table)

    p = sub.add_parser("convert-fcfnn", parents=[common], help="exact FCFNN to Rank-R FNN conversion")
    p.add_argument("--fcfnn", help="FCFNN model file; a random one is drawn when omitted")
    p.add_argument("--shape", type=int_tuple, required=True)
    p.add_argument("--hidden", type=int, default=4)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--activation", choices=sorted(K.ACTIVATIONS), default="sigmoid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--save-source", help="also write the random FCFNN here")
    p.add_argument("--out")
    p.set_defaults(func=cmd_convert_fcfnn)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--shape", type=int_tuple)
    p.add_argument("--rank", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--activation", choices=sorted(K.ACTIVATIONS))
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth-data", parents=[common], help="write the synthetic low-rank task")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--n-per-class", type=int, default=80)
    p.add_argument("--shape", type=int_tuple, default=(5, 5, 8))
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("noise", parents=[common], help="add per-band Gaussian noise to a data set")
    _add_data_options(p)
    p.add_argument("--level", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise)
    return parser


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _prescan(argv: list[str]) -> tuple[Optional[str], Optional[str]]:
    """Subcommand name and ``--config`` value, read before full parsing."""
    command = argv[0] if argv and not argv[0].startswith("-") else None
    config = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    return command, config


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        command, config = _prescan(argv)
        if config and command:
            try:
                sub = _subparser(parser, command)
            except KeyError:
                sub = None  # argparse reports the bad subcommand below
            if sub is not None:
                _apply_config(sub, read_config(config))
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except SystemExit as exc:  # argparse reports usage errors this way
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
