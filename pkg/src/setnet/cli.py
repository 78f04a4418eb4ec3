"""Command-line entry point.

Subcommands: verify-theorem, check-equivariance, train, eval, actmax,
sample-mesh. Every run derives all randomness from one seed; training runs
write their fully resolved config next to their outputs so any artifact can
be reproduced exactly.

Exit codes: 0 success, 2 config/usage error, 3 file-format error, 4 numeric
error, 5 budget exceeded, 1 anything else.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from . import data as datamod
from . import theorem
from . import train as trainmod
from .errors import (
    BudgetError,
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    NumericError,
    SetNetError,
)
from .layers import load_params, restore_params
from .train import (
    ExperimentConfig,
    activation_maximization,
    build_experiment_data,
    build_experiment_model,
    config_lines,
    default_config,
    evaluate_classifier,
    evaluate_regressor,
    make_set_batch,
    parse_config_text,
    train_loop,
)

_EXIT_CODES = (
    (ConfigError, 2),
    (ContractError, 2),
    (DimensionError, 2),
    (FormatError, 3),
    (NumericError, 4),
    (BudgetError, 5),
)


def _fail_code(exc: SetNetError) -> int:
    for cls, code in _EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1


def _load_config(args) -> ExperimentConfig:
    values: Dict[str, str] = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            values = parse_config_text(fh.read())
    if getattr(args, "experiment", None):
        values.setdefault("experiment", args.experiment)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        values[key.strip()] = val.strip()
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    if "experiment" not in values:
        raise ConfigError("provide --config FILE or --experiment NAME")
    return ExperimentConfig(values)


def cmd_verify_theorem(args) -> int:
    n = args.n
    basis = theorem.commutant_basis(n)
    dim = len(basis)
    structure_ok = True
    worst = 0.0
    for b in basis:
        diag = np.diag(b)
        off = b[~np.eye(n, dtype=bool)]
        spread = max(float(diag.max() - diag.min()), float(off.max() - off.min()))
        worst = max(worst, spread)
        structure_ok = structure_ok and spread <= 1e-10
    rng = np.random.default_rng(args.seed)
    forward_ok = True
    for _ in range(args.trials):
        lam, gam = rng.uniform(-10, 10, size=2)
        forward_ok = forward_ok and theorem.commutes_with_all(
            theorem.tied_weight_matrix(lam, gam, n), mode=args.mode
        )
    verdict = dim == 2 and structure_ok and forward_ok
    print(f"commutant of the permutation matrices on n={n} points")
    print(f"commutant_dimension={dim}")
    print(f"basis_structure_spread={worst!r}")
    print(f"forward_direction_trials={args.trials}")
    print(f"forward_direction_ok={forward_ok}")
    print(f"verdict={'pass' if verdict else 'fail'}")
    if verdict:
        print(f"every matrix commuting with all permutations on {n} points is "
              "a multiple of the identity plus a constant matrix (dimension 2).")
    return 0 if verdict else 1


def cmd_check_equivariance(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.demo:
        if args.demo == "stack":
            from .layers import EquivariantLayer, SetBatch

            layers = [
                EquivariantLayer(args.channels, 8, "channel_full", "tanh", rng=rng, name="d1"),
                EquivariantLayer(8, 8, "channel_factored", "tanh", rng=rng, name="d2"),
                EquivariantLayer(8, args.channels, "scalar_sum" if args.channels == 1 else "channel_full", "identity", rng=rng, name="d3"),
            ]

            def f(x):
                batch = SetBatch(x[None], np.array([x.shape[0]]))
                for layer in layers:
                    batch = layer.forward(batch)
                return batch.values[0]

        else:  # an unconstrained dense layer mixing the set axis: not equivariant
            w = rng.normal(size=(args.n, args.n))

            def f(x):
                return w @ x

        report = theorem.check_equivariance_empirical(f, args.n, args.trials, rng, channels=args.channels)
    else:
        config = _load_config(args)
        train_data, _ = build_experiment_data(config)
        model = build_experiment_model(config, train_data)
        if args.checkpoint:
            arrays, _ = load_params(args.checkpoint)
            restore_params(model.params(), {k: v for k, v in arrays.items() if not k.startswith("opt.")})
        report = _probe_model(model, config, train_data, args, rng)
    for line in report.lines():
        print(line)
    print(f"verdict={'equivariant' if report.equivariant else 'not-equivariant'}")
    if report.invariant_output_ordering:
        print("note: output is identical for permuted inputs (order-normalising, set-level)")
    return 0


def _probe_model(model, config: ExperimentConfig, train_data, args, rng):
    k = train_data.channels
    n = args.n

    if config.experiment == "setregression":
        def f(x):
            from .layers import SetBatch

            batch = SetBatch(x[None], np.array([x.shape[0]]))
            return model.predict(batch)[0][:, None]

        return theorem.check_equivariance_empirical(f, n, args.trials, rng, channels=k)
    if config.experiment == "pointcloud":
        def f(x):
            import numpy as _np

            from . import autodiff as ad
            from .layers import SetBatch

            batch = SetBatch(x[None], _np.array([x.shape[0]]))
            tape = ad.Tape()
            xs = tape.constant(batch.values)
            bound = {p.name: tape.constant(p.value) for p in model.params()}
            return model.equivariant_stack(tape, xs, batch.cardinalities, bound).value[0]

        return theorem.check_equivariance_empirical(f, n, args.trials, rng, channels=k)
    # mnist: the pooled logits should be permutation-invariant for III/IV
    def f(x):
        from .layers import SetBatch

        batch = SetBatch(x[None], np.array([x.shape[0]]))
        return np.repeat(model.predict_logits(batch), x.shape[0], axis=0)

    return theorem.check_equivariance_empirical(f, n, args.trials, rng, channels=k)


def cmd_train(args) -> int:
    config = _load_config(args)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved.cfg"), "w") as fh:
        fh.write(config_lines(config.values))
    train_data, val_data = build_experiment_data(config)
    model = build_experiment_model(config, train_data)
    metrics_path = os.path.join(out_dir, "metrics.log")
    best_path = os.path.join(out_dir, "checkpoint_best.txt")
    last_path = os.path.join(out_dir, "checkpoint_last.txt")
    with open(metrics_path, "w") as metrics_file:
        result = train_loop(
            model,
            config,
            train_data,
            val_data,
            metrics_sink=lambda rec: metrics_file.write(rec.line() + "\n"),
            best_checkpoint_path=best_path,
            last_checkpoint_path=last_path,
            resume_from=args.resume,
            log=None if args.quiet else print,
        )
    summary = [
        f"experiment={config.experiment}",
        f"variant={config.variant}",
        f"epochs={config.epochs}",
        f"best_epoch={result.best_epoch}",
        f"best_val_{model.metric_name}={result.best_metric!r}",
    ]
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write("\n".join(summary) + "\n")
    for line in summary:
        print(line)
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args)
    _, val_data = build_experiment_data(config)
    model = build_experiment_model(config, val_data)
    arrays, meta = load_params(args.checkpoint)
    restore_params(model.params(), {k: v for k, v in arrays.items() if not k.startswith("opt.")})
    if val_data.set_labels is not None:
        loss, metric = evaluate_classifier(model, val_data)
    else:
        loss, metric = evaluate_regressor(model, val_data)
    print(f"val_loss={loss!r}")
    print(f"val_{model.metric_name}={metric!r}")
    if "val_metric" in meta:
        recorded = float(meta["val_metric"])
        print(f"recorded_val_{meta.get('metric_name', 'metric')}={recorded!r}")
        print(f"reproduction_error={abs(recorded - metric)!r}")
    return 0


def cmd_actmax(args) -> int:
    config = _load_config(args)
    if config.experiment != "pointcloud":
        raise ConfigError("actmax operates on pointcloud models")
    train_data, _ = build_experiment_data(config)
    model = build_experiment_model(config, train_data)
    if args.checkpoint:
        arrays, _ = load_params(args.checkpoint)
        restore_params(model.params(), {k: v for k, v in arrays.items() if not k.startswith("opt.")})
    rng = np.random.default_rng(args.seed if args.seed is not None else config.seed)
    result = activation_maximization(
        model, args.layer, args.unit, args.points, args.iters, rng, threshold=args.threshold
    )
    datamod.save_xyz(args.out, result.points)
    print(f"layer={args.layer} unit={args.unit} iterations={result.iterations}")
    print(f"final_activation={result.activation!r}")
    print(f"activated={result.activated}")
    print(f"points_written={args.out}")
    if not result.activated:
        print("unit was not activated above threshold; result kept for inspection")
    return 0


def cmd_sample_mesh(args) -> int:
    mesh = datamod.load_off(args.off)
    rng = np.random.default_rng(args.seed)
    points = datamod.sample_point_cloud(mesh, args.points, rng)
    if args.augment:
        points = datamod.augment_cloud(points, rng)
    datamod.save_xyz(args.out, points)
    print(f"sampled {args.points} points from {args.off} -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="setnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-theorem", help="verify the tied-weights commutant computationally")
    p.add_argument("--n", type=int, default=4, help="set size (2..7)")
    p.add_argument("--mode", choices=["exhaustive", "transpositions"], default="transpositions")
    p.add_argument("--trials", type=int, default=100, help="random forward-direction samples")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify_theorem)

    p = sub.add_parser("check-equivariance", help="probe a model or demo function for equivariance")
    p.add_argument("--demo", choices=["stack", "dense"], help="probe a built-in demo instead of a model")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--experiment", help="experiment name (defaults config)")
    p.add_argument("--checkpoint", help="restore parameters before probing")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--n", type=int, default=8, help="set size to probe")
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_equivariance)

    p = sub.add_parser("train", help="run a training experiment")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--experiment", help="experiment name; uses default config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", help="continue from a saved checkpoint")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the config's validation data")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--experiment", help="experiment name; uses default config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("actmax", help="optimize a point cloud to excite one hidden unit")
    p.add_argument("--config", help="pointcloud config file")
    p.add_argument("--experiment", help="experiment name; uses default config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--checkpoint", help="trained parameters to visualize")
    p.add_argument("--layer", type=int, default=0, help="equivariant layer index")
    p.add_argument("--unit", type=int, default=0, help="channel within the layer")
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="xyz output file")
    p.set_defaults(func=cmd_actmax)

    p = sub.add_parser("sample-mesh", help="sample a point cloud from an OFF mesh")
    p.add_argument("--off", required=True)
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment", action="store_true", help="apply random z-rotation and scale")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample_mesh)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SetNetError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return _fail_code(exc)


if __name__ == "__main__":
    sys.exit(main())
