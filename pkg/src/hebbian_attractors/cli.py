"""Batch command line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 numeric divergence,
3 file input/output error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .envs import PerturbationSpec
from .errors import ConfigurationError, InputError, NumericDivergenceError, PersistenceError
from .harness import (ExperimentConfig, RolloutHooks, load_genome, load_record, run_condition_grid,
                      run_meta_training, run_rollout)
from .plasticity import save_rule

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("hebbian_attractors")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise PersistenceError(f"cannot read {path}: {exc}") from exc


def build_config(args) -> ExperimentConfig:
    """Config file (flat dotted keys), then ``--set`` overrides, then dedicated flags."""
    flat = ExperimentConfig().to_dict()
    if getattr(args, "config", None):
        doc = _read_json(args.config)
        flat.update(doc.get("config", doc) if doc.get("format") == "hebbian-run-record" else doc)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        if key not in flat:
            raise ConfigurationError(f"unknown config key {key!r}")
        flat[key] = _parse_value(value)
    for name in ("condition", "generations", "popsize", "seed", "workers", "repeats", "optimizer"):
        value = getattr(args, name, None)
        if value is not None:
            flat[name] = value
    if getattr(args, "output", None):
        flat["output_dir"] = args.output
    return ExperimentConfig.from_dict(flat)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with flat dotted config keys (or a run record)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config path, e.g. env.v_target=0.5 (repeatable)")
    p.add_argument("--condition", choices=list("ABCDE"))
    p.add_argument("--seed", type=int)


def _genome_and_config(args) -> tuple[np.ndarray, ExperimentConfig]:
    if args.record:
        record = load_record(args.record)
        args.config = args.config or args.record
        genome = np.array(record.best_genome)
    else:
        genome = None
    config = build_config(args)
    if args.genome:
        genome = load_genome(args.genome)
    if genome is None:
        raise ConfigurationError("need --genome or --record")
    return genome, config


def _hooks(args) -> RolloutHooks:
    impulses = []
    for item in args.impulse or []:
        try:
            time_s, value = item.split(":", 1)
            impulses.append((float(time_s), [float(v) for v in value.split(",")]))
        except ValueError as exc:
            raise ConfigurationError(f"--impulse expects TIME:J[,J...], got {item!r}") from exc
    pert = PerturbationSpec(impulses=impulses) if impulses else None
    freeze = tuple(args.freeze) if args.freeze else None
    return RolloutHooks(perturbation=pert, freeze_steps=freeze)


def _write_rollout_outputs(result, out: Path | None) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    analysis.save_report(result.report, out / "report.json")
    series = result.series()
    analysis.write_csv(out / "plasticity.csv", {"t": np.arange(1, series.size + 1), "delta_w": series})
    pts, _ = analysis.pca_embed(result.trajectory, 2)
    analysis.write_csv(out / "pca.csv", {"t": result.trajectory.steps, "pc1": pts[:, 0], "pc2": pts[:, 1]})


def _print_rollout(result) -> None:
    r = result.report
    freq = "" if r.dominant_frequency is None else f" dominant={r.dominant_frequency:.2f}Hz"
    print(f"fitness={result.fitness:.3f} verdict={r.verdict.value} "
          f"early={r.mean_early:.4g} late={r.mean_late:.4g}{freq}")


def cmd_train(args) -> int:
    config = build_config(args)

    def progress(stats):
        if args.verbose:
            print(f"gen {stats['generation']:4d} best {stats['best']:9.3f} mean {stats['mean']:9.3f}")

    record = run_meta_training(config, resume=args.resume, progress=progress)
    print(f"best_fitness={record.best_fitness:.3f} generations={len(record.history)} hash={record.config_hash}")
    return EXIT_OK


def cmd_rollout(args) -> int:
    genome, config = _genome_and_config(args)
    out = Path(args.output) if args.output else None
    dump = None
    if args.dump:
        out = out or Path(".")
        out.mkdir(parents=True, exist_ok=True)
        dump = out / "trajectory.csv"
    result = run_rollout(genome, config, args.rollout_seed, hooks=_hooks(args), rho=args.rho, dump=dump)
    _write_rollout_outputs(result, out)
    _print_rollout(result)
    return EXIT_DIVERGED if result.diverged else EXIT_OK


def cmd_grid(args) -> int:
    config = build_config(args)
    cells = run_condition_grid(config, args.windows, args.f_hebb, args.seeds, n_eval=args.n_eval,
                               rho=args.rho, output_dir=args.output,
                               progress=print if args.verbose else None)
    for c in cells:
        print(f"M={c.window:<3d} f_hebb={c.f_hebb:<5g} {c.status} converged={c.converged_ratio:.3f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cols = analysis.read_csv(args.weights)
    names = [n for n in cols if n.startswith("w_")]
    if "t" not in cols or not names:
        raise InputError(f"{args.weights} needs a t column and w_* columns")
    traj = analysis.WeightTrajectory(cols["t"].astype(int), np.stack([cols[n] for n in names], axis=1),
                                     tuple(args.layer_sizes) if args.layer_sizes else None)
    series = analysis.plasticity_series(traj)
    report = analysis.classify_convergence(series, args.rho, args.early_fraction)
    if report.verdict is analysis.Verdict.LIMIT_CYCLE and len(traj) >= 8:
        report.dominant_frequency = analysis.weight_spectrum(traj, args.sample_rate).dominant_frequency
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        analysis.save_report(report, out / "report.json")
        analysis.write_csv(out / "plasticity.csv", {"t": traj.steps[1:], "delta_w": series})
    print(json.dumps(report.to_dict()))
    return EXIT_DIVERGED if report.verdict is analysis.Verdict.DIVERGED else EXIT_OK


def cmd_swap_demo(args) -> int:
    genome, config = _genome_and_config(args)
    if len(args.swap) % 2:
        raise ConfigurationError("--swap takes STEP RULE_FILE pairs")
    swaps = {int(args.swap[i]): args.swap[i + 1] for i in range(0, len(args.swap), 2)}
    hooks = RolloutHooks(swaps=swaps)
    out = Path(args.output) if args.output else None
    result = run_rollout(genome, config, args.rollout_seed, hooks=hooks, rho=args.rho)
    _write_rollout_outputs(result, out)
    if out is not None:
        save_rule(config.rule_for(genome), out / "initial_rule.json")
        analysis.write_csv(out / "velocity.csv", {"t": np.arange(result.rewards.size), "reward": result.rewards,
                                                  **{f"action_{i}": result.actions[:, i]
                                                     for i in range(result.actions.shape[1])}})
    bounds = [0, *sorted(swaps), result.rewards.size]
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi > lo:
            print(f"steps {lo:5d}-{hi:5d}: mean reward {result.rewards[lo:hi].mean():.3f}")
    _print_rollout(result)
    return EXIT_DIVERGED if result.diverged else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hebbian-attractors", description="Plastic controllers with evolved Hebbian rules.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="meta-train a Hebbian rule with an evolution strategy")
    _add_config_args(p)
    p.add_argument("--generations", type=int)
    p.add_argument("--popsize", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--optimizer", choices=["adaptive", "openai"])
    p.add_argument("--output", help="output directory for checkpoint, record, curve and genome")
    p.add_argument("--resume", help="checkpoint file to continue from")
    p.set_defaults(func=cmd_train)

    for name, func, help_text in (("rollout", cmd_rollout, "deploy a trained rule for one episode"),
                                  ("swap-demo", cmd_swap_demo, "swap coefficient files mid-episode")):
        p = sub.add_parser(name, help=help_text)
        _add_config_args(p)
        p.add_argument("--record", help="run record; supplies config and best genome")
        p.add_argument("--genome", help="genome JSON file")
        p.add_argument("--rollout-seed", type=int, default=0)
        p.add_argument("--rho", type=float, default=0.9)
        p.add_argument("--output", help="output directory for reports and CSV series")
        if name == "rollout":
            p.add_argument("--freeze", type=int, nargs=2, metavar=("START", "END"),
                           help="disable plasticity on control steps START..END-1")
            p.add_argument("--impulse", action="append", metavar="TIME:J",
                           help="impulse at TIME seconds, e.g. 25:1.5 (repeatable)")
            p.add_argument("--dump", action="store_true", help="write trajectory.csv and its weight file")
        else:
            p.add_argument("--swap", nargs="+", required=True, metavar="STEP RULE",
                           help="pairs of control step and rule JSON file")
        p.set_defaults(func=func)

    p = sub.add_parser("grid", help="sweep averaging window M and Hebbian frequency")
    _add_config_args(p)
    p.add_argument("--windows", type=int, nargs="+", default=[1, 2, 4, 10, 20])
    p.add_argument("--f-hebb", type=float, nargs="+", default=[1.0, 5.0, 10.0, 20.0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--n-eval", type=int, default=10)
    p.add_argument("--generations", type=int)
    p.add_argument("--popsize", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--rho", type=float, default=0.9)
    p.add_argument("--output")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("analyze", help="classify a weight-snapshot CSV (t, w_0, w_1, ...)")
    p.add_argument("weights")
    p.add_argument("--sample-rate", type=float, default=20.0)
    p.add_argument("--layer-sizes", type=int, nargs="+")
    p.add_argument("--rho", type=float, default=0.9)
    p.add_argument("--early-fraction", type=float, default=0.05)
    p.add_argument("--output")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NumericDivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (PersistenceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigurationError, InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
