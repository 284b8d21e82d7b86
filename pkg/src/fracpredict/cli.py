"""Command line entry point (``fracpredict``).

Exit status: 0 on success, 2 for configuration or domain errors, 3 for
numerical failures.
"""
import argparse
import io
import json
import os
import sys

import numpy as np

from .continuous import KernelVariant, psi_fbm, psi_fou, write_psi_csv
from .errors import ConfigError, DomainError, FracPredictError, NumericalError
from .harness import (
    ExperimentConfig,
    SCALES,
    build_exact_predictor,
    simulate_test_paths,
    train_network,
    compare_exact_vs_nn,
    load_config,
    run_convergence_study,
    run_experiment,
    run_table_sweep,
    write_comparison_csv,
)
from .exact import theoretical_mse, write_weights_csv
from .nn import TrainingConfig, save_network
from .paths import write_binary, write_csv


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.scale == "paper" and not _has_training_section(args.config):
        sc = SCALES["paper"]
        changes["train"] = TrainingConfig(n_batches=sc["n_batches"], batch_size=sc["batch_size"])
    return cfg.replace(**changes) if changes else cfg


def _has_training_section(path):
    if not path:
        return False
    with open(path) as fh:
        return any(line.strip().lower() == "[training]" for line in fh)


def _out(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _with_header(path, echo):
    with open(path) as fh:
        body = fh.read()
    with open(path, "w", newline="") as fh:
        fh.write(f"# config: {json.dumps(echo, sort_keys=True)}\n" + body)


def cmd_simulate(args):
    cfg = _config(args)
    grid = cfg.test_grid()
    batch = simulate_test_paths(cfg, grid, args.n_paths, cfg.seed)
    if args.format == "binary":
        path = _out(args, "paths.fpb")
        write_binary(batch, path)
    else:
        path = _out(args, "paths.csv")
        buf = io.StringIO()
        write_csv(batch, buf)
        with open(path, "w", newline="") as fh:
            fh.write(f"# config: {json.dumps(cfg.to_dict(), sort_keys=True)}\n" + buf.getvalue())
    print(path)


def cmd_predict_exact(args):
    cfg = _config(args)
    pred = build_exact_predictor(cfg, cfg.test_grid())
    path = _out(args, "weights.csv")
    write_weights_csv(pred, path)
    _with_header(path, cfg.to_dict())
    if pred.transform is None:
        print(f"theoretical_mse {theoretical_mse(pred)!r}")
    print(path)


def cmd_predict_continuous(args):
    cfg = _config(args)
    v = np.linspace(0.0, cfg.s, args.points + 2)[1:-1]
    if cfg.process == "fbm":
        psi = psi_fbm(cfg.s, cfg.T, v, cfg.H)
    elif cfg.process == "fou":
        psi = psi_fou(cfg.s, cfg.T, v, cfg.H, KernelVariant(args.variant), decay=cfg.a)
    else:
        raise ConfigError("continuous predictors exist for fbm and fou only")
    path = _out(args, "psi.csv")
    write_psi_csv(v, psi, path)
    _with_header(path, dict(cfg.to_dict(), variant=args.variant))
    print(path)


def cmd_train(args):
    cfg = _config(args)
    net, trace = train_network(cfg, cfg.test_grid())
    save_network(net, _out(args, "network.fpnn"))
    path = _out(args, "loss_trace.csv")
    trace.write_csv(path)
    _with_header(path, cfg.to_dict())
    print(path)


def cmd_evaluate(args):
    cfg = _config(args)
    report = run_experiment(cfg)
    path = _out(args, "report.csv")
    report.write_csv(path)
    print(path)


def cmd_table(args):
    path = _out(args, f"table{args.number}.csv")
    run_table_sweep(f"TABLE{args.number}", args.scale, 0 if args.seed is None else args.seed,
                    out=path)
    print(path)


def cmd_convergence(args):
    seed = 0 if args.seed is None else args.seed
    res = run_convergence_study(args.process, args.H, args.s, args.T, args.N, seed,
                                fine_steps=args.fine_steps, variant=args.variant)
    path = _out(args, "convergence.csv")
    res.write_csv(path, {"s": args.s, "T": args.T, "seed": seed, "fine_steps": args.fine_steps})
    print(path)


def cmd_compare(args):
    cfg = _config(args)
    rows = compare_exact_vs_nn(cfg, args.T)
    path = _out(args, "compare.csv")
    write_comparison_csv(rows, path, cfg)
    print(path)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value experiment file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--scale", choices=("desk", "paper"), default="desk")

    p = argparse.ArgumentParser(prog="fracpredict",
                                description="Prediction of fractional processes.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate test-grid paths")
    s.add_argument("--n-paths", type=int, default=100)
    s.add_argument("--format", choices=("csv", "binary"), default="csv")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("predict-exact", parents=[common], help="export exact predictor weights")
    s.set_defaults(func=cmd_predict_exact)

    s = sub.add_parser("predict-continuous", parents=[common], help="tabulate the continuous weight")
    s.add_argument("--points", type=int, default=200)
    s.add_argument("--variant", choices=[v.value for v in KernelVariant],
                   default=KernelVariant.Z_ARGUMENT.value)
    s.set_defaults(func=cmd_predict_continuous)

    s = sub.add_parser("train", parents=[common], help="train a network")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="ME/MSE report for one experiment")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("table", parents=[common], help="run a table sweep")
    s.add_argument("number", type=int, choices=(1, 2, 3, 4))
    s.set_defaults(func=cmd_table)

    s = sub.add_parser("convergence", parents=[common], help="discrete vs continuous study")
    s.add_argument("--process", choices=("fbm", "fou"), default="fbm")
    s.add_argument("--H", type=float, default=0.7)
    s.add_argument("--s", type=float, default=5.0)
    s.add_argument("--T", type=float, default=10.0)
    s.add_argument("--N", type=int, nargs="+", default=[2 ** p for p in range(4, 11)])
    s.add_argument("--fine-steps", type=int, default=2 ** 14)
    s.add_argument("--variant", choices=[v.value for v in KernelVariant],
                   default=KernelVariant.Z_ARGUMENT.value)
    s.set_defaults(func=cmd_convergence)

    s = sub.add_parser("compare", parents=[common], help="exact vs network MSE over T")
    s.add_argument("--T", type=float, nargs="+", default=[10.0])
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, DomainError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except FracPredictError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
