"""Command-line entry point: dataset generation, training, evaluation,
latency benchmarks and the architecture sweep, with file-based outputs.

Exit codes: 0 success, 1 usage error, 2 numeric failure.
"""

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import harness, mpc, nn, rl, sl, trajgen
from .features import FEATURE_DIMS
from .vehicle import VehicleParams

USAGE_ERROR = 1
NUMERIC_ERROR = 2


class NumericFailure(RuntimeError):
    pass


class UsageExit(SystemExit):
    def __init__(self, message):
        print(f"error: {message}", file=sys.stderr)
        super().__init__(USAGE_ERROR)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        raise UsageExit(message)


def _atomic_write(path: Path, write_fn) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, obj) -> None:
    _atomic_write(path, lambda tmp: Path(tmp).write_text(json.dumps(obj, indent=2) + "\n"))


def _resolved_config(args, params: VehicleParams, extra=None) -> dict:
    cfg = {
        "command": args.command,
        "vehicle": dataclasses.asdict(params),
        "args": {k: v for k, v in vars(args).items() if k not in ("command", "func")},
    }
    if extra:
        cfg.update(extra)
    return cfg


def _vehicle_params(args) -> VehicleParams:
    return VehicleParams(v=args.v, l_f=args.l_f, dt=args.dt, delta_max=args.delta_max)


def _mpc_config(args, params: VehicleParams) -> mpc.MpcConfig:
    return mpc.MpcConfig(delta_max=params.delta_max)


def _load_track(args, params: VehicleParams) -> trajgen.RefTrajectory:
    if getattr(args, "track", None):
        return trajgen.load_track(args.track, params)
    return trajgen.build_validation_track(params)


def _add_vehicle_args(p) -> None:
    p.add_argument("--v", type=float, default=3.0, help="speed, m/s")
    p.add_argument("--l-f", dest="l_f", type=float, default=0.15875,
                   help="front-to-CG distance, m")
    p.add_argument("--dt", type=float, default=0.05, help="step, s")
    p.add_argument("--delta-max", type=float, default=0.4189,
                   help="steering bound, rad")


def cmd_gen_data(args) -> int:
    params = _vehicle_params(args)
    cfg = _mpc_config(args, params)
    spec = trajgen.DatasetSpec(set_id=args.set, samples=args.samples, seed=args.seed)
    dataset, info = trajgen.build_dataset(spec, args.features, params, cfg)
    failure_rate = info["skipped"] / (info["skipped"] + spec.samples)
    out = Path(args.out)
    _atomic_write(out, lambda tmp: trajgen.save_dataset(dataset, tmp))
    manifest = {
        "samples": spec.samples,
        "skipped": info["skipped"],
        "failure_rate": failure_rate,
        "kind_counts": {k: info["provenance"].count(k) for k in set(info["provenance"])},
        "provenance": info["provenance"],
    }
    _write_json(out.with_suffix(out.suffix + ".manifest.json"), manifest)
    _write_json(out.with_suffix(out.suffix + ".config.json"),
                _resolved_config(args, params, {"dataset_spec": dataclasses.asdict(spec)}))
    labels = dataset.labels
    print(f"wrote {spec.samples} samples to {out} "
          f"(skipped {info['skipped']}, failure rate {failure_rate:.4%})")
    print(f"labels: mean {labels.mean():+.5f}  std {labels.std():.5f}  "
          f"min {labels.min():+.5f}  max {labels.max():+.5f}")
    if failure_rate > 0.01:
        raise NumericFailure(
            f"solver failure rate {failure_rate:.2%} exceeds 1%"
        )
    return 0


def cmd_train_sl(args) -> int:
    params = _vehicle_params(args)
    dataset = trajgen.load_dataset(args.data)
    cfg = sl.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        seed=args.seed,
        early_stop_patience=args.patience,
    )
    try:
        result = sl.train_supervised(
            dataset, (args.width,) * args.layers, args.activation,
            params.delta_max, cfg,
        )
    except sl.TrainingDiverged as exc:
        raise NumericFailure(str(exc)) from exc
    out = Path(args.out)
    _atomic_write(out, lambda tmp: nn.save(result.net, tmp))
    curve = out.with_suffix(out.suffix + ".curve.csv")

    def write_curve(tmp):
        with open(tmp, "w") as fh:
            fh.write("epoch,train_loss,val_loss\n")
            for i, (tr, va) in enumerate(zip(result.train_losses, result.val_losses)):
                fh.write(f"{i},{tr:.17g},{va:.17g}\n")

    _atomic_write(curve, write_curve)
    _write_json(out.with_suffix(out.suffix + ".config.json"),
                _resolved_config(args, params, {"train": dataclasses.asdict(cfg)}))
    print(f"wrote {out}; best val mse {result.best_val_loss:.3e} "
          f"at epoch {result.best_epoch} of {len(result.val_losses)}")
    return 0


def cmd_train_rl(args) -> int:
    params = _vehicle_params(args)
    cfg = rl.DdpgConfig(
        episodes=args.episodes,
        episode_len=args.episode_len,
        seed=args.seed,
        eval_every=args.eval_every,
    )
    actor, history = rl.train_ddpg(cfg, params)
    out = Path(args.out)
    _atomic_write(out, lambda tmp: nn.save(actor, tmp))
    curve = out.with_suffix(out.suffix + ".curve.csv")

    def write_curve(tmp):
        with open(tmp, "w") as fh:
            fh.write("episode,return,critic_loss\n")
            for i, (ret, closs) in enumerate(
                zip(history.episode_returns, history.critic_losses)
            ):
                fh.write(f"{i},{ret:.17g},{closs:.17g}\n")

    _atomic_write(curve, write_curve)
    _write_json(out.with_suffix(out.suffix + ".config.json"),
                _resolved_config(args, params, {"ddpg": dataclasses.asdict(cfg)}))
    print(f"wrote {out}; best eval return {history.best_eval_return:.2f} "
          f"at episode {history.best_episode}")
    if not history.improved_over_init:
        print("warning: no checkpoint beat the initial actor", file=sys.stderr)
    return 0


def _controller_for_model(path, params: VehicleParams):
    net = nn.load(path)
    by_dim = {dim: kind for kind, dim in FEATURE_DIMS.items()}
    if net.input_dim not in by_dim:
        raise NumericFailure(
            f"model input dimension {net.input_dim} matches no known input set"
        )
    kind = by_dim[net.input_dim]
    return harness.NetController(net, kind, params), kind, net


def cmd_eval(args) -> int:
    params = _vehicle_params(args)
    cfg = _mpc_config(args, params)
    track = _load_track(args, params)
    steps = args.steps if args.steps else 2 * len(track)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    _atomic_write(out_dir / "track.csv", lambda tmp: trajgen.save_track(track, tmp))
    expert = harness.rollout(harness.MpcController(cfg, params), track, steps, params)
    if expert.diverged_at is not None:
        raise NumericFailure(f"expert rollout diverged at step {expert.diverged_at}")
    _atomic_write(out_dir / "expert_rollout.csv",
                  lambda tmp: harness.save_rollout(expert, tmp))

    if args.expert:
        test, name = expert, "expert"
    else:
        controller, kind, _ = _controller_for_model(args.model, params)
        test = harness.rollout(controller, track, steps, params)
        name = f"model ({kind})"
        _atomic_write(out_dir / "model_rollout.csv",
                      lambda tmp: harness.save_rollout(test, tmp))
    if test.diverged_at is not None:
        raise NumericFailure(f"{name} rollout diverged at step {test.diverged_at}")
    metrics = harness.compute_metrics(test, expert)
    _atomic_write(out_dir / "metrics.json",
                  lambda tmp: harness.save_metrics(metrics, tmp))
    _write_json(out_dir / "config.json", _resolved_config(args, params))
    print(f"{name} vs expert over {steps} steps: mean {metrics.mean_cm:.3f} cm, "
          f"max {metrics.max_cm:.3f} cm, std {metrics.std_cm:.3f} cm, "
          f"latency {metrics.latency_s*1e6:.2f} us/step")
    return 0


def cmd_bench(args) -> int:
    params = _vehicle_params(args)
    cfg = _mpc_config(args, params)
    track = _load_track(args, params)
    instances = harness.collect_bench_instances(track, params, cfg)
    if args.expert:
        fn, inputs = harness.prepare_mpc_bench(instances, cfg, params)
        name = "expert-mpc"
        calls = max(2000, args.calls // 10)
    else:
        _, kind, net = _controller_for_model(args.model, params)
        fn, inputs = harness.prepare_net_bench(net, instances, kind)
        name = f"net-{kind}"
        calls = args.calls
    median_s = harness.bench_latency(fn, inputs, calls)
    doc = {
        "controller": name,
        "median_seconds_per_call": median_s,
        "calls": calls,
        "instances": len(inputs),
    }
    if args.out:
        _write_json(Path(args.out), doc)
    print(f"{name}: median {median_s*1e6:.2f} us/call over {calls} calls")
    return 0


def cmd_sweep(args) -> int:
    params = _vehicle_params(args)
    cfg = _mpc_config(args, params)
    with open(args.spec) as fh:
        raw = json.load(fh)
    spec = sl.SweepSpec(
        input_kinds=tuple(raw.get("input_kinds", ("i3", "i21", "i40"))),
        hidden_layer_counts=tuple(raw.get("hidden_layer_counts", (1, 2, 3))),
        widths=tuple(raw.get("widths", (10, 20, 40))),
        activations=tuple(raw.get("activations", ("relu", "tanh", "sigmoid"))),
        dataset_ids=tuple(raw.get("dataset_ids", (3,))),
        seeds=tuple(raw.get("seeds", (0, 1, 2))),
    )
    train_cfg = sl.TrainConfig(
        epochs=raw.get("epochs", 200),
        batch_size=raw.get("batch_size", 64),
        learning_rate=raw.get("learning_rate", 1e-3),
        early_stop_patience=raw.get("patience", 20),
    )
    samples = raw.get("samples", 50_000)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    datasets = {}
    for ds_id in spec.dataset_ids:
        for kind in spec.input_kinds:
            ds_spec = trajgen.DatasetSpec(set_id=ds_id, samples=samples,
                                          seed=raw.get("data_seed", 0))
            datasets[(ds_id, kind)], _ = trajgen.build_dataset(ds_spec, kind, params, cfg)
            print(f"dataset {ds_id}/{kind} labeled")

    track = _load_track(args, params)
    steps = 2 * len(track)
    expert = harness.rollout(harness.MpcController(cfg, params), track, steps, params)
    instances = harness.collect_bench_instances(track, params, cfg)

    def evaluate(net, kind):
        test = harness.rollout(harness.NetController(net, kind, params),
                               track, steps, params)
        if test.diverged_at is not None or len(test) != len(expert):
            raise NumericFailure(f"rollout diverged at {test.diverged_at}")
        m = harness.compute_metrics(test, expert)
        fn, inputs = harness.prepare_net_bench(net, instances, kind)
        lat = harness.bench_latency(fn, inputs, 5000)
        return {
            "mean_cm": m.mean_cm, "max_cm": m.max_cm, "std_cm": m.std_cm,
            "latency_us": lat * 1e6,
        }

    result = sl.run_sweep(spec, datasets, evaluate, train_cfg, params.delta_max)
    _atomic_write(out_dir / "sweep.csv", lambda tmp: sl.save_sweep(result, tmp))
    _write_json(out_dir / "config.json", _resolved_config(args, params, {"spec": raw}))
    print(f"wrote {out_dir / 'sweep.csv'} ({len(result.rows)} rows, "
          f"{len(result.errors)} failures)")
    for cell, msg in result.errors:
        print(f"  failed {cell}: {msg}", file=sys.stderr)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="steerlab",
                     description="Bicycle trajectory-tracking control lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate an expert-labeled dataset")
    p.add_argument("--set", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--features", choices=("i3", "i21", "i40"), default="i40")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=50_000)
    _add_vehicle_args(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-sl", help="train a supervised imitation net")
    p.add_argument("--data", required=True)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--width", type=int, default=10)
    p.add_argument("--activation", choices=nn.HIDDEN_ACTIVATIONS, default="sigmoid")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    _add_vehicle_args(p)
    p.set_defaults(func=cmd_train_sl)

    p = sub.add_parser("train-rl", help="train the DDPG actor")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=400)
    p.add_argument("--episode-len", type=int, default=500)
    p.add_argument("--eval-every", type=int, default=25)
    _add_vehicle_args(p)
    p.set_defaults(func=cmd_train_rl)

    p = sub.add_parser("eval", help="closed-loop evaluation against the expert")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model")
    group.add_argument("--expert", action="store_true")
    p.add_argument("--track", help="track CSV (default: bundled circuit)")
    p.add_argument("--steps", type=int, default=0, help="rollout steps (default: 2 laps)")
    p.add_argument("--out", required=True)
    _add_vehicle_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="controller latency benchmark")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model")
    group.add_argument("--expert", action="store_true")
    p.add_argument("--track", help="track CSV (default: bundled circuit)")
    p.add_argument("--calls", type=int, default=20_000)
    p.add_argument("--out")
    _add_vehicle_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="run an architecture sweep from a spec file")
    p.add_argument("--spec", required=True, help="JSON sweep spec")
    p.add_argument("--out", required=True)
    p.add_argument("--track", help="track CSV (default: bundled circuit)")
    _add_vehicle_args(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageExit as exc:
        return exc.code
    try:
        return args.func(args)
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return NUMERIC_ERROR
    except (OSError, ValueError, nn.ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
