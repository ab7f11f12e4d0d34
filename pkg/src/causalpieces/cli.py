"""Command line interface.

Subcommands cover the full toolkit: `sweep` (mu/sigma estimate grids),
`count` (piece counting over a dataset), `correlate` (piece counts at
initialization vs trained accuracy), `train`, `evolve`, and `estimate`
(closed-form bounds and Monte Carlo eta).  Every output file embeds the
tool version, the resolved configuration, and the seed, so a rerun with
the same flags reproduces it byte for byte.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .core import (
    DimensionError,
    InputError,
    NetworkParams,
    Topology,
    forward_batch,
)
from .data import (
    GridConfig,
    ParseError,
    Sample,
    YinYangConfig,
    generate_yinyang,
    stack_features,
    yinyang_grid,
)
from .estimation import (
    FAMILIES,
    OPTIMIZED_COEFFS,
    DistributionSpec,
    deep_upper_bound,
    eta_from_pqk,
    grid_sweep,
    monte_carlo_pqk,
    sparre_andersen_bound,
)
from .evolution import EvoConfig, evolve
from .pieces import (
    assign_layer_piece_ids,
    assign_neuron_piece_ids,
    count_network_pieces,
    count_pieces,
    set_size_stats,
)
from .training import (
    DivergenceError,
    TrainConfig,
    initialize_weights,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = ["CorrelationReport", "UsageError", "main"]

_OUTDIR_ENV = "CAUSALPIECES_OUTDIR"


class UsageError(Exception):
    """Bad flag values or combinations; maps to exit code 2."""


@dataclass
class CorrelationReport:
    """Per-run records plus the two Pearson correlations.

    records rows: (mu, sigma, pieces_before, pieces_after,
    best_accuracy).  degenerate flags reports with too few runs or zero
    variance, where r is trivial or undefined.
    """

    records: list[tuple[float, float, int, int, float]]
    r_log_pieces: float
    r_pieces: float
    degenerate: bool


# ---------------------------------------------------------------------------
# flag value parsing
# ---------------------------------------------------------------------------


def _parse_topology(text: str) -> Topology:
    try:
        sizes = [int(p) for p in text.split(",")]
    except ValueError:
        raise UsageError(f"topology {text!r} must be comma-separated integers")
    if len(sizes) < 2:
        raise UsageError("topology needs at least input and output sizes")
    return Topology(sizes)


def _parse_init(text: str) -> DistributionSpec:
    family, _, rest = text.partition(":")
    if family not in FAMILIES:
        raise UsageError(f"unknown family {family!r}, pick one of {FAMILIES}")
    if rest in ("", "optimized"):
        return DistributionSpec(family, coeffs=OPTIMIZED_COEFFS[family])
    try:
        values = [float(v) for v in rest.split(",")]
    except ValueError:
        raise UsageError(f"init values {rest!r} must be numbers")
    if len(values) == 2:
        return DistributionSpec(family, params=tuple(values))
    if len(values) == 4:
        return DistributionSpec(family, coeffs=tuple(values))
    raise UsageError("init needs 'family', 'family:p0,p1' or 'family:c0,c1,c2,c3'")


def _parse_range(text: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"range {text!r} must be start:stop:step")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise UsageError(f"range {text!r} must be numeric")
    if step <= 0.0:
        raise UsageError(f"range step must be positive, got {step}")
    if stop <= start:
        raise UsageError(f"range {text!r} covers no area (stop <= start)")
    count = int(round((stop - start) / step)) + 1
    return start + step * np.arange(count)


def _parse_dataset(text: str, seed: int) -> list[Sample]:
    kind, _, arg = text.partition(":")
    if kind == "yinyang":
        try:
            count = int(arg) if arg else 5000
        except ValueError:
            raise UsageError(f"yinyang size {arg!r} must be an integer")
        return generate_yinyang(YinYangConfig(count=count, seed=seed))
    if kind == "grid":
        try:
            resolution = int(arg) if arg else 100
        except ValueError:
            raise UsageError(f"grid resolution {arg!r} must be an integer")
        return yinyang_grid(GridConfig(resolution))
    raise UsageError(f"dataset {text!r} must be yinyang[:count] or grid[:resolution]")


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"missing required flags: {', '.join(missing)}")


# ---------------------------------------------------------------------------
# output plumbing
# ---------------------------------------------------------------------------


# where an artifact lands is not part of its semantics, so the embedded
# config skips the output location and the config-file path (whose
# contents are already resolved into the other values)
_META_SKIP = frozenset({"func", "output_dir", "config"})


def _config_dict(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _META_SKIP}


def _meta_lines(args: argparse.Namespace) -> list[str]:
    cfg = json.dumps(_config_dict(args), sort_keys=True)
    return [f"# causalpieces {__version__}", f"# config: {cfg}"]


def _out_path(args: argparse.Namespace, name: str) -> str:
    out_dir = args.output_dir or os.environ.get(_OUTDIR_ENV, ".")
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


def _write_csv(path: str, args: argparse.Namespace, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in _meta_lines(args):
            fh.write(line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    print(f"wrote {path}")


def _write_json(path: str, args: argparse.Namespace, payload: dict) -> None:
    blob = {"version": __version__, "config": _config_dict(args)}
    blob.update(payload)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {path}")


def _count_output_pieces(params, weights, x) -> int:
    ids, _ = assign_neuron_piece_ids(forward_batch(params, weights, x))
    return count_pieces(ids, ids.num_layers - 1)


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    if len(a) < 2 or np.var(a) == 0.0 or np.var(b) == 0.0:
        return math.nan
    return float(np.corrcoef(a, b)[0, 1])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_sweep(args: argparse.Namespace) -> int:
    _require(args, "n", "samples", "mu", "sigma")
    mus = _parse_range(args.mu)
    sigmas = _parse_range(args.sigma)
    result = grid_sweep(mus, sigmas, args.n, args.samples, theta=args.theta,
                        seed=args.seed)
    rows = [
        (mus[i], sigmas[j], result.fraction[i, j], result.log2_eta[i, j],
         result.stderr[i, j])
        for i in range(len(mus))
        for j in range(len(sigmas))
    ]
    _write_csv(_out_path(args, "sweep.csv"), args,
               ["mu", "sigma", "fraction", "log2_eta", "stderr"], rows)
    print(f"swept {len(mus)}x{len(sigmas)} grid at n={args.n}")
    return 0


def cmd_count(args: argparse.Namespace) -> int:
    _require(args, "dataset")
    if (args.checkpoint is None) == (args.init is None):
        raise UsageError("give exactly one of --checkpoint and --init")
    if args.checkpoint is not None:
        result, params = load_checkpoint(args.checkpoint)
        weights = result.effective_weights
        topology = weights.topology
    else:
        if args.topology is None:
            raise UsageError("--init needs --topology")
        topology = _parse_topology(args.topology)
        params = NetworkParams()
        weights = initialize_weights(topology, _parse_init(args.init),
                                     np.random.default_rng([args.seed, 0]))
    samples = _parse_dataset(args.dataset, args.data_seed)
    x, _ = stack_features(samples)
    if x.shape[1] != topology.num_inputs:
        raise InputError(
            f"dataset width {x.shape[1]} does not match the network's "
            f"{topology.num_inputs} inputs"
        )

    trace = forward_batch(params, weights, x)
    ids, _ = assign_neuron_piece_ids(trace)
    ids = assign_layer_piece_ids(ids)
    layer_rows = []
    for ell in range(ids.num_layers):
        stats = set_size_stats(trace, ell)
        layer_rows.append((ell, count_pieces(ids, ell), stats.median, stats.q1,
                           stats.q3))
    layer_rows.append(("network", count_network_pieces(ids), "", "", ""))
    _write_csv(_out_path(args, "count_layers.csv"), args,
               ["layer", "pieces", "set_size_median", "set_size_q1", "set_size_q3"],
               layer_rows)

    id_rows = [
        (s, *(int(ids.layer_ids[ell][s]) for ell in range(ids.num_layers)))
        for s in range(x.shape[0])
    ]
    _write_csv(_out_path(args, "count_ids.csv"), args,
               ["sample"] + [f"layer{ell}_piece" for ell in range(ids.num_layers)],
               id_rows)
    for row in layer_rows:
        print(f"layer {row[0]}: {row[1]} pieces")
    return 0


def cmd_correlate(args: argparse.Namespace) -> int:
    _require(args, "runs")
    if args.runs < 2:
        raise UsageError("--runs must be at least 2")
    topology = _parse_topology(args.topology)
    train_set = generate_yinyang(YinYangConfig(count=args.train_count,
                                               seed=args.data_seed))
    test_set = generate_yinyang(YinYangConfig(count=args.test_count,
                                              seed=args.data_seed + 1))
    x_train, _ = stack_features(train_set)
    params = NetworkParams()

    def one_run(run: int) -> tuple[float, float, int, int, float]:
        rng = np.random.default_rng([args.seed, run])
        mu = float(rng.uniform(-0.2, 0.8))
        sigma = float(rng.uniform(0.0, 1.0))
        train_seed = int(rng.integers(0, 2**31))
        spec = DistributionSpec("normal", params=(mu, sigma))
        init_ws = initialize_weights(topology, spec,
                                     np.random.default_rng([train_seed, 0]))
        before = _count_output_pieces(params, init_ws, x_train)
        config = TrainConfig(learning_rate=args.lr, batch_size=args.batch,
                             epochs=args.epochs, seed=train_seed,
                             eval_every=args.eval_every)
        result = train(train_set, test_set, topology, spec, config, params)
        after = _count_output_pieces(params, result.effective_weights, x_train)
        return mu, sigma, before, after, result.metrics.best_accuracy

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            records = list(pool.map(one_run, range(args.runs)))
    else:
        records = [one_run(r) for r in range(args.runs)]

    pieces = np.array([rec[2] for rec in records], dtype=np.float64)
    acc = np.array([rec[4] for rec in records])
    spiking = pieces > 0.0
    report = CorrelationReport(
        records,
        _pearson(np.log(pieces[spiking]), acc[spiking]),
        _pearson(pieces, acc),
        degenerate=(args.runs < 3 or np.var(pieces) == 0.0 or np.var(acc) == 0.0
                    or int(np.sum(spiking)) < 3),
    )
    _write_csv(_out_path(args, "correlate.csv"), args,
               ["run", "mu", "sigma", "pieces_before", "pieces_after",
                "best_accuracy"],
               [(r, *rec) for r, rec in enumerate(records)])
    _write_json(_out_path(args, "correlate.json"), args, {
        "r_log_pieces": None if math.isnan(report.r_log_pieces) else report.r_log_pieces,
        "r_pieces": None if math.isnan(report.r_pieces) else report.r_pieces,
        "degenerate": report.degenerate,
        "runs": args.runs,
    })
    print(f"r(log pieces, accuracy) = {report.r_log_pieces}")
    print(f"r(pieces, accuracy) = {report.r_pieces}")
    if report.degenerate:
        print("report is degenerate: too few runs or zero variance")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    _require(args, "topology", "init")
    topology = _parse_topology(args.topology)
    init = _parse_init(args.init)
    if args.dataset != "yinyang":
        raise UsageError("only the yinyang dataset is supported for training")
    train_set = generate_yinyang(YinYangConfig(count=args.train_count,
                                               seed=args.data_seed))
    test_set = generate_yinyang(YinYangConfig(count=args.test_count,
                                              seed=args.data_seed + 1))
    config = TrainConfig(learning_rate=args.lr, batch_size=args.batch,
                         epochs=args.epochs, xi=args.xi, seed=args.seed,
                         positive_weights=args.positive, readout=args.readout,
                         eval_every=args.eval_every)
    params = NetworkParams()

    piece_counts: dict[int, int] = {}
    hook = None
    if args.track_pieces:
        x_train, _ = stack_features(train_set)

        def hook(epoch: int, weights) -> None:
            piece_counts[epoch] = _count_output_pieces(params, weights, x_train)

    result = train(train_set, test_set, topology, init, config, params,
                   eval_hook=hook)
    save_checkpoint(_out_path(args, "checkpoint.json"), result, params)
    print(f"wrote {_out_path(args, 'checkpoint.json')}")

    metrics = result.metrics
    eval_at = dict(zip(metrics.eval_epochs, metrics.test_accuracy))
    rows = [
        (epoch, loss, eval_at.get(epoch, ""), piece_counts.get(epoch, ""))
        for epoch, loss in enumerate(metrics.train_loss)
    ]
    _write_csv(_out_path(args, "train_metrics.csv"), args,
               ["epoch", "train_loss", "test_accuracy", "pieces_output_layer"],
               rows)
    print(f"best test accuracy {metrics.best_accuracy} at epoch {metrics.best_epoch}")
    return 0


def cmd_evolve(args: argparse.Namespace) -> int:
    _require(args, "topology")
    config = EvoConfig(
        topology=_parse_topology(args.topology),
        family=args.family,
        population_keep=args.population_keep,
        perturb_std=args.perturb_std,
        patience=args.patience,
        max_loops=args.max_loops,
        probe_resolution=args.probe_resolution,
        nets_per_candidate=args.nets_per_candidate,
        seed=args.seed,
    )
    best, history = evolve(config)
    _write_csv(_out_path(args, "evolve_history.csv"), args,
               ["loop", "candidate", "c0", "c1", "c2", "c3", "fitness"],
               [(loop, idx, *cand.spec.coeffs, cand.fitness)
                for loop, idx, cand in history])
    _write_json(_out_path(args, "evolve_best.json"), args, {
        "family": best.spec.family,
        "coeffs": list(best.spec.coeffs),
        "fitness": best.fitness,
    })
    print(f"best {best.spec.family} coeffs {best.spec.coeffs} "
          f"with fitness {best.fitness}")
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    payload: dict
    if args.bound == "sparre":
        if args.n is None:
            raise UsageError("--bound sparre needs --n")
        value = sparre_andersen_bound(args.n)
        payload = {"bound": "sparre", "n": args.n, "fraction": value}
        print(f"sparre-andersen fraction lower bound at n={args.n}: {value:.6e}")
    elif args.bound == "deep":
        if args.topology is None or args.init is None:
            raise UsageError("--bound deep needs --topology and --init")
        topology = _parse_topology(args.topology)
        spec = _parse_init(args.init)
        profiles = []
        for ell in range(topology.num_layers):
            layer_seed = int(np.random.SeedSequence([args.seed, ell])
                             .generate_state(1)[0])
            profiles.append(monte_carlo_pqk(spec, topology.layer_sizes[ell],
                                            args.samples, theta=args.theta,
                                            seed=layer_seed))
        log2_eta = deep_upper_bound(profiles, topology)
        payload = {"bound": "deep", "layer_sizes": list(topology.layer_sizes),
                   "log2_eta": log2_eta}
        print(f"layered estimate: log2(eta) = {log2_eta}")
    else:
        if args.n is None or args.init is None:
            raise UsageError("Monte Carlo estimate needs --n and --init")
        spec = _parse_init(args.init)
        profile = monte_carlo_pqk(spec, args.n, args.samples, theta=args.theta,
                                  seed=args.seed)
        est = eta_from_pqk(profile)
        payload = {"n": args.n, "eta": est.eta, "fraction": est.fraction,
                   "log2_eta": est.log2_eta, "stderr": est.stderr}
        print(f"eta = {est.eta} (fraction {est.fraction}, "
              f"log2 {est.log2_eta}, stderr {est.stderr})")
    _write_json(_out_path(args, "estimate.json"), args, payload)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _build_parser() -> tuple[argparse.ArgumentParser, list[argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0,
                        help="master seed recorded in every output")
    common.add_argument("--output-dir", default=None,
                        help=f"output directory (default: ${_OUTDIR_ENV} or '.')")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads where a command parallelizes")
    common.add_argument("--config", default=None,
                        help="JSON file of flag defaults (explicit flags win)")

    parser = argparse.ArgumentParser(
        prog="causalpieces",
        description="Exact spike-time simulation and causal-piece analysis "
                    "of single-spike networks.",
    )
    parser.add_argument("--version", action="version",
                        version=f"causalpieces {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    subparsers = []

    p = sub.add_parser("sweep", parents=[common],
                       help="eta estimates over a (mu, sigma) grid")
    p.add_argument("--n", type=int, help="fan-in")
    p.add_argument("--samples", type=int, help="Monte Carlo draws per k")
    p.add_argument("--mu", help="start:stop:step")
    p.add_argument("--sigma", help="start:stop:step")
    p.add_argument("--theta", type=float, default=1.0)
    p.set_defaults(func=cmd_sweep)
    subparsers.append(p)

    p = sub.add_parser("count", parents=[common],
                       help="piece counts of a network over a dataset")
    p.add_argument("--dataset", help="yinyang[:count] or grid[:resolution]")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--checkpoint", help="checkpoint JSON to load")
    p.add_argument("--topology", help="comma-separated layer sizes")
    p.add_argument("--init", help="family[:p0,p1 | :c0,c1,c2,c3 | :optimized]")
    p.set_defaults(func=cmd_count)
    subparsers.append(p)

    p = sub.add_parser("correlate", parents=[common],
                       help="piece count at initialization vs trained accuracy")
    p.add_argument("--runs", type=int)
    p.add_argument("--topology", default="4,30,3")
    p.add_argument("--train-count", type=int, default=5000)
    p.add_argument("--test-count", type=int, default=5000)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--eval-every", type=int, default=10)
    p.set_defaults(func=cmd_correlate)
    subparsers.append(p)

    p = sub.add_parser("train", parents=[common], help="train a network")
    p.add_argument("--dataset", default="yinyang")
    p.add_argument("--topology")
    p.add_argument("--init")
    p.add_argument("--train-count", type=int, default=5000)
    p.add_argument("--test-count", type=int, default=5000)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--xi", type=float, default=None)
    p.add_argument("--positive", action="store_true",
                   help="clamp weights to be non-negative")
    p.add_argument("--readout", choices=["spike_times", "linear_head"],
                   default="spike_times")
    p.add_argument("--eval-every", type=int, default=10)
    p.add_argument("--track-pieces", action="store_true",
                   help="count output-layer pieces at every evaluation")
    p.set_defaults(func=cmd_train)
    subparsers.append(p)

    p = sub.add_parser("evolve", parents=[common],
                       help="evolutionary search for initialization parameters")
    p.add_argument("--topology")
    p.add_argument("--family", choices=list(FAMILIES), default="normal")
    p.add_argument("--population-keep", type=int, default=4)
    p.add_argument("--perturb-std", type=float, default=0.1)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--max-loops", type=int, default=100)
    p.add_argument("--probe-resolution", type=int, default=100)
    p.add_argument("--nets-per-candidate", type=int, default=1)
    p.set_defaults(func=cmd_evolve)
    subparsers.append(p)

    p = sub.add_parser("estimate", parents=[common],
                       help="piece-count estimates and bounds")
    p.add_argument("--bound", choices=["sparre", "deep"])
    p.add_argument("--n", type=int, help="fan-in")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--init", help="weight distribution for mc/deep modes")
    p.add_argument("--topology", help="layer sizes for --bound deep")
    p.add_argument("--theta", type=float, default=1.0)
    p.set_defaults(func=cmd_estimate)
    subparsers.append(p)
    return parser, subparsers


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, subparsers = _build_parser()

    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config is not None:
        try:
            with open(known.config, encoding="utf-8") as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"usage error: cannot read config file: {exc}", file=sys.stderr)
            return 2
        if not isinstance(overrides, dict):
            print("usage error: config file must hold a JSON object",
                  file=sys.stderr)
            return 2
        # overrides become per-subcommand defaults, so explicit flags win
        consumed = set()
        for sp in subparsers:
            dests = {action.dest for action in sp._actions}
            matched = {k: v for k, v in overrides.items() if k in dests}
            consumed.update(matched)
            sp.set_defaults(**matched)
        unknown = sorted(set(overrides) - consumed)
        if unknown:
            print(f"usage error: unknown config keys: {', '.join(unknown)}",
                  file=sys.stderr)
            return 2

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (InputError, DimensionError, ParseError, DivergenceError,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
