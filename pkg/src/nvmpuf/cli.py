"""Command-line interface.

Verbs: ``analyze`` (per-challenge set/reset distributions), ``lifetime``
(death-probability curves and half-life summary), ``simulate`` (CRP
datasets and wear snapshots), ``metrics`` (uniformity, uniqueness,
reliability), ``attack`` (accuracy-vs-training-size curves) and
``export-chain`` (write a built-in chain as a chain-spec file).

Every command takes explicit seeds, writes CSV/JSON data files atomically
and, unless ``--no-figures`` is given, renders a PNG figure next to them.
Exit codes: 0 success, 1 validation error, 2 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import attack as attack_mod
from . import chains, device, lifetime, metrics
from ._fileio import write_csv, write_json, atomic_write_text
from .chains import ChainFormatError, ChainValidationError
from .lifetime import HalfLifeNotReached
from .occupancy import (
    ConvergenceError,
    per_challenge_ops,
    sample_trajectories,
    total_variation,
)

OUTDIR_ENV = "NVMPUF_OUTDIR"

#: Config-file keys that may supply defaults for the matching CLI flags.
CONFIG_KEYS = {
    "outdir",
    "seed",
    "epsilon",
    "n_pairs",
    "n_levels",
    "mean_set_pulses",
    "reset_pulses",
    "devices",
    "crps",
    "variation_sigma",
    "noise_sigma",
    "sizes",
    "limit",
    "cells",
    "dead_fraction",
}


def _add_chain_options(parser: argparse.ArgumentParser, *, repeatable_puf: bool = False) -> None:
    group = parser.add_argument_group("chain selection")
    if repeatable_puf:
        group.add_argument("--puf", action="append", choices=chains.BUILTIN_CHAIN_NAMES,
                           default=None, help="built-in chain (repeatable)")
    else:
        group.add_argument("--puf", choices=chains.BUILTIN_CHAIN_NAMES, default=None,
                           help="built-in chain to analyze")
    group.add_argument("--chain", default=None, metavar="FILE",
                       help="chain-spec JSON file (alternative to --puf)")
    group.add_argument("--level-expanded", action="store_true",
                       help="use the exact pulse-countdown construction")
    group.add_argument("--calibrated", action="store_true",
                       help="level-expanded chain with the frozen half-life calibration")
    group.add_argument("--target-mean-pulses", type=float, default=None,
                       help="tilt level selection to this mean pulse count")
    group.add_argument("--n-pairs", type=int, default=128)
    group.add_argument("--n-levels", type=int, default=8)
    group.add_argument("--mean-set-pulses", type=float, default=3.5)
    group.add_argument("--reset-pulses", type=float, default=1.0)


def _chain_from_args(args, name: str | None = None):
    name = name or args.puf
    if args.chain and name:
        raise ValueError("give either --puf or --chain, not both")
    if args.chain:
        return Path(args.chain).stem, chains.load_chain(args.chain)
    if not name:
        raise ValueError("no chain selected; use --puf or --chain")
    params = chains.ChainParams(
        n_pairs=args.n_pairs,
        n_levels=args.n_levels,
        mean_set_pulses=args.mean_set_pulses,
        reset_pulses=args.reset_pulses,
    )
    chain = chains.builtin_chain(
        name,
        params,
        level_expanded=args.level_expanded,
        calibrated=args.calibrated,
        target_mean_pulses=args.target_mean_pulses,
    )
    return name, chain


def _outdir(args) -> Path:
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _figures_enabled(args) -> bool:
    return not args.no_figures


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def cmd_analyze(args) -> int:
    name, chain = _chain_from_args(args)
    out = _outdir(args)
    ops = per_challenge_ops(chain, epsilon=args.epsilon)

    summary = {
        "chain": name,
        "epsilon": args.epsilon,
        "set": ops.set_dist.to_document(),
        "reset": ops.reset_dist.to_document(),
        "mean_set": ops.mean_set,
        "mean_reset": ops.mean_reset,
    }

    oracle = None
    if args.oracle:
        oracle = sample_trajectories(chain, args.oracle, seed=args.seed)
        summary["oracle"] = {
            "trajectories": args.oracle,
            "seed": args.seed,
            "tv_set": total_variation(ops.set_dist, oracle.set_dist),
            "tv_reset": total_variation(ops.reset_dist, oracle.reset_dist),
        }

    for kind, dist in (("set", ops.set_dist), ("reset", ops.reset_dist)):
        path = out / f"{name}_{kind}_dist.csv"
        if oracle is None:
            write_csv(path, ["count", "probability"], dist.csv_rows())
        else:
            empirical = oracle.set_dist if kind == "set" else oracle.reset_dist
            rows = []
            for count, prob in dist.csv_rows():
                mc = empirical.pmf[count] if count < empirical.support else 0.0
                rows.append((count, prob, float(mc)))
            write_csv(path, ["count", "probability", "monte_carlo"], rows)
        print(f"wrote {path}")

    write_json(out / f"{name}_ops.json", summary)
    print(f"wrote {out / f'{name}_ops.json'}")

    if _figures_enabled(args):
        from . import plotting

        figure = out / f"{name}_ops_dist.png"
        plotting.save_ops_figure(
            {"set": ops.set_dist, "reset": ops.reset_dist}, figure,
            f"Per-challenge operations: {name}",
        )
        print(f"wrote {figure}")
    return 0


# ---------------------------------------------------------------------------
# lifetime
# ---------------------------------------------------------------------------


def _lifetime_params(args, mode: lifetime.Mode) -> lifetime.LifetimeParams:
    return lifetime.LifetimeParams(
        endurance_limit=args.limit,
        cell_count=args.cells,
        dead_fraction=args.dead_fraction,
        mode=mode,
        either_exceeds=args.either_exceeds,
    )


def cmd_lifetime(args) -> int:
    names = args.puf or []
    if not names and not args.chain:
        names = ["reap-nvm"]
    selections = []
    for name in names:
        selections.append(_chain_from_args(args, name=name))
    if args.chain:
        selections.append(_chain_from_args(args))

    modes = (
        [lifetime.Mode.SET, lifetime.Mode.RESET, lifetime.Mode.COMBINED]
        if args.mode == "all"
        else [lifetime.Mode(args.mode)]
    )
    grid = lifetime.default_challenge_grid(
        start=args.grid_start, stop=args.grid_stop, factor=args.grid_factor
    )
    out = _outdir(args)

    curves: dict[str, lifetime.LifetimeCurve] = {}
    summary_rows = []
    half_lives: dict[tuple[str, str], float | None] = {}
    for name, chain in selections:
        for mode in modes:
            curve = lifetime.lifetime_curve(
                chain, _lifetime_params(args, mode), grid, epsilon=args.epsilon
            )
            label = f"{name} ({mode.value})"
            curves[label] = curve
            path = out / f"{name}_lifetime_{mode.value}.csv"
            write_csv(path, ["challenges", "p_dead"], curve.csv_rows())
            write_json(out / f"{name}_lifetime_{mode.value}.json", curve.to_document())
            print(f"wrote {path}")
            try:
                hl = lifetime.half_life(curve)
            except HalfLifeNotReached:
                hl = None
            half_lives[(name, mode.value)] = hl
            summary_rows.append(
                (name, mode.value, "" if hl is None else f"{hl:.1f}")
            )

    write_csv(out / "half_life_summary.csv", ["puf", "mode", "half_life"], summary_rows)
    print(f"wrote {out / 'half_life_summary.csv'}")

    summary: dict = {
        "half_lives": {f"{n}/{m}": hl for (n, m), hl in half_lives.items()},
    }
    seen = [n for n, _ in selections]
    if len(seen) >= 2:
        ratios = {}
        for mode in modes:
            a = half_lives.get((seen[0], mode.value))
            b = half_lives.get((seen[1], mode.value))
            if a and b:
                ratios[mode.value] = a / b
        summary["half_life_ratio"] = {f"{seen[0]}/{seen[1]}": ratios}
    write_json(out / "half_life_summary.json", summary)

    if any(hl is None for hl in half_lives.values()):
        missing = [k for k, hl in half_lives.items() if hl is None]
        print(f"error: curve never reaches 50% for {missing}; extend the grid",
              file=sys.stderr)
        return 2

    if _figures_enabled(args):
        from . import plotting

        figure = out / "lifetime_curves.png"
        plotting.save_lifetime_figure(curves, figure)
        print(f"wrote {figure}")
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    out = _outdir(args)
    baseline = args.baseline == "apuf"
    wear_histograms = {}
    for i in range(args.devices):
        dev = device.new_device(
            seed=args.device_seed + i,
            variation_sigma=args.variation_sigma,
            noise_sigma=args.noise_sigma,
            nvm_enabled=not baseline,
        )
        records = device.gen_crps(
            dev,
            args.crps,
            seed=args.seed,
            noise_seed=args.noise_seed + i if args.noise_seed is not None else None,
            baseline_apuf=baseline,
        )
        prefix = "apuf" if baseline else "reap-nvm"
        crp_path = out / f"{prefix}_device{i}_crps.jsonl"
        atomic_write_text(crp_path, device.crps_to_jsonl(records))
        snap_path = out / f"{prefix}_device{i}_snapshot.json"
        write_json(snap_path, device.device_to_document(dev))
        wear_histograms[f"device {i}"] = dev.wear_set.copy()
        print(
            f"wrote {crp_path} ({len(records)} records, "
            f"{dev.total_set_pulses()} set pulses, {dev.total_resets()} resets)"
        )
        print(f"wrote {snap_path}")

    if _figures_enabled(args) and not baseline:
        from . import plotting
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for label, wear in wear_histograms.items():
            ax.hist(wear, bins=30, alpha=0.6, label=label)
        ax.set_xlabel("set pulses per cell")
        ax.set_ylabel("cells")
        ax.set_title(f"Wear after {args.crps} challenges")
        ax.legend()
        fig.tight_layout()
        figure = out / "wear_distribution.png"
        plotting._save(fig, figure)
        print(f"wrote {figure}")
    return 0


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _load_dataset_words(path: str, width: int):
    records = device.load_crps(path)
    bits = [r.response for r in records]
    return device.crps_to_arrays(records), metrics.pack(bits, width)


def cmd_metrics(args) -> int:
    out = _outdir(args)
    width = args.word_width
    packed = []
    challenge_keys = []
    for path in args.datasets:
        (bits, pairs, levels, _), response_set = _load_dataset_words(path, width)
        packed.append((Path(path).stem, response_set))
        challenge_keys.append((bits.tobytes(), pairs.tobytes(), levels.tobytes()))

    summary: dict = {"word_width": width}
    histogram_series = {}
    for stem, response_set in packed:
        weights = metrics.hamming_weight_histogram(
            response_set.words.sum(axis=1), width
        )
        write_csv(
            out / f"uniformity_{stem}.csv",
            ["hamming_weight", "count"],
            list(enumerate(int(c) for c in weights)),
        )
        histogram_series[f"uniformity {stem}"] = weights
        summary.setdefault("uniformity_mean_pct", {})[stem] = float(
            metrics.uniformity_each(response_set).mean()
        )
        print(f"wrote {out / f'uniformity_{stem}.csv'}")

    if len(packed) >= 2:
        if len(set(challenge_keys)) != 1:
            raise ValueError(
                "uniqueness needs datasets sharing one challenge sequence; "
                "regenerate with a common seed"
            )
        distances = metrics.word_hamming_distances(packed[0][1], packed[1][1])
        histogram = metrics.hamming_weight_histogram(distances, width)
        write_csv(
            out / "uniqueness_hist.csv",
            ["hamming_distance", "count"],
            list(enumerate(int(c) for c in histogram)),
        )
        histogram_series["uniqueness"] = histogram
        # Pairwise scalar over all devices, averaged across word indices.
        n_words = min(p[1].n_words for p in packed)
        per_word = [
            metrics.uniqueness(np.stack([p[1].words[i] for p in packed]))
            for i in range(n_words)
        ]
        summary["uniqueness_mean_pct"] = float(np.mean(per_word))
        print(f"wrote {out / 'uniqueness_hist.csv'}")
    else:
        print("uniqueness skipped: needs at least two datasets")

    if args.repeats:
        base = packed[0][1]
        repeat_sets = []
        for path in args.repeats:
            _, response_set = _load_dataset_words(path, width)
            repeat_sets.append(response_set)
        per_word = [
            metrics.reliability(base.words[i], [r.words[i] for r in repeat_sets])
            for i in range(base.n_words)
        ]
        write_csv(
            out / "reliability_words.csv",
            ["word_index", "reliability_pct"],
            list(enumerate(float(v) for v in per_word)),
        )
        summary["reliability_mean_pct"] = float(np.mean(per_word))
        print(f"wrote {out / 'reliability_words.csv'}")

    write_json(out / "metrics_summary.json", summary)
    print(f"wrote {out / 'metrics_summary.json'}")

    if _figures_enabled(args) and histogram_series:
        from . import plotting

        figure = out / "metrics_hist.png"
        plotting.save_histogram_figure(
            histogram_series, figure, "bits", "Response-word histograms"
        )
        print(f"wrote {figure}")
    return 0


# ---------------------------------------------------------------------------
# attack
# ---------------------------------------------------------------------------


def _parse_attack_dataset(spec: str) -> tuple[attack_mod.Source, str]:
    if "=" not in spec:
        raise ValueError(
            f"dataset must be given as source=path with source in "
            f"{[s.value for s in attack_mod.Source]}, got {spec!r}"
        )
    source_name, path = spec.split("=", 1)
    return attack_mod.Source(source_name), path


def cmd_attack(args) -> int:
    out = _outdir(args)
    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else None
    rows = []
    results_doc = {}
    for spec in args.dataset:
        source, path = _parse_attack_dataset(spec)
        records = device.load_crps(path)
        dataset = attack_mod.dataset_from_crps(records, source)
        chosen_sizes = sizes or [10_000 * k for k in range(1, 10)]
        chosen_sizes = [s for s in chosen_sizes if s <= len(dataset) - len(dataset) // 5]
        if not chosen_sizes:
            raise ValueError(
                f"dataset {path} too small for any requested training size"
            )
        results = attack_mod.attack_curve(dataset, chosen_sizes, args.seed)
        for res in results:
            rows.append((source.value, res.train_size, res.test_accuracy, res.seed))
        results_doc[source.value] = [
            {
                "train_size": r.train_size,
                "test_accuracy": r.test_accuracy,
                "train_accuracy": r.train_accuracy,
                "epochs": r.epochs,
                "seed": r.seed,
            }
            for r in results
        ]

    write_csv(
        out / "attack_curve.csv",
        ["source", "train_size", "accuracy", "seed"],
        rows,
    )
    write_json(out / "attack_curve.json", results_doc)
    print(f"wrote {out / 'attack_curve.csv'}")

    if _figures_enabled(args):
        from . import plotting

        figure = out / "attack_curve.png"
        plotting.save_attack_figure(
            [(source, size, acc) for source, size, acc, _ in rows], figure
        )
        print(f"wrote {figure}")
    return 0


# ---------------------------------------------------------------------------
# export-chain
# ---------------------------------------------------------------------------


def cmd_export_chain(args) -> int:
    name, chain = _chain_from_args(args)
    target = Path(args.out) if args.out else _outdir(args) / f"{name}_chain.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(target, chains.export_chain(chain))
    print(f"wrote {target}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvmpuf",
        description="NVM-PUF endurance modeling, simulation and attack evaluation",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--outdir",
        default=os.environ.get(OUTDIR_ENV, "."),
        help=f"output directory (default: ${OUTDIR_ENV} or current directory)",
    )
    common.add_argument("--config", default=None, metavar="FILE",
                        help="JSON file supplying defaults for known options")
    common.add_argument("--no-figures", action="store_true",
                        help="skip PNG figure rendering")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common],
                       help="per-challenge set/reset distributions")
    _add_chain_options(p)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--oracle", type=int, default=0, metavar="N",
                   help="also run an N-trajectory Monte Carlo oracle")
    p.add_argument("--seed", type=int, default=1, help="oracle seed")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("lifetime", parents=[common], help="lifetime curves and half-life summary")
    _add_chain_options(p, repeatable_puf=True)
    p.add_argument("--mode", choices=["set", "reset", "combined", "all"],
                   default="set")
    p.add_argument("--either-exceeds", action="store_true",
                   help="combined mode: dead when either total exceeds the limit")
    p.add_argument("--limit", type=int, default=lifetime.DEFAULT_ENDURANCE_LIMIT)
    p.add_argument("--cells", type=int, default=lifetime.DEFAULT_CELL_COUNT)
    p.add_argument("--dead-fraction", type=float, default=lifetime.DEFAULT_DEAD_FRACTION)
    p.add_argument("--grid-start", type=int, default=1)
    p.add_argument("--grid-stop", type=int, default=lifetime.DEFAULT_GRID_STOP)
    p.add_argument("--grid-factor", type=float, default=lifetime.DEFAULT_GRID_FACTOR)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.set_defaults(func=cmd_lifetime)

    p = sub.add_parser("simulate", parents=[common], help="simulate devices and generate CRP datasets")
    p.add_argument("--devices", type=int, default=2)
    p.add_argument("--crps", type=int, default=102_400)
    p.add_argument("--seed", type=int, default=1,
                   help="challenge seed (shared across devices)")
    p.add_argument("--device-seed", type=int, default=1000,
                   help="base seed for device instantiation")
    p.add_argument("--noise-seed", type=int, default=None,
                   help="base seed for measurement noise")
    p.add_argument("--variation-sigma", type=float, default=1.0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--baseline", choices=["apuf"], default=None,
                   help="plain arbiter baseline (pair/level zeroed, NVM disabled)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("metrics", parents=[common], help="uniformity/uniqueness/reliability")
    p.add_argument("--datasets", nargs="+", required=True, metavar="CRPS")
    p.add_argument("--repeats", nargs="+", default=None, metavar="CRPS",
                   help="repeat datasets (same challenges) for reliability; "
                        "first --datasets entry is the reference")
    p.add_argument("--word-width", type=int, default=metrics.DEFAULT_WORD_WIDTH)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("attack", parents=[common], help="logistic-regression modeling attack")
    p.add_argument("--dataset", action="append", required=True,
                   metavar="SOURCE=PATH",
                   help="dataset with its source, e.g. apuf=apuf_crps.jsonl "
                        "(repeatable)")
    p.add_argument("--sizes", default=None,
                   help="comma-separated training sizes "
                        "(default 10000..90000 step 10000, filtered to fit)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("export-chain", parents=[common], help="write a chain-spec JSON file")
    _add_chain_options(p)
    p.add_argument("--out", default=None, metavar="FILE")
    p.set_defaults(func=cmd_export_chain)

    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    # Pull --config out early so its values can act as parser defaults.
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", default=None)
    known, _ = probe.parse_known_args(argv)
    if known.config:
        with open(known.config) as handle:
            config = json.load(handle)
        unknown = set(config) - CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        parser.set_defaults(**config)
        for action in parser._subparsers._group_actions:  # type: ignore[union-attr]
            for sub in action.choices.values():
                sub.set_defaults(
                    **{k: v for k, v in config.items()
                       if any(a.dest == k for a in sub._actions)}
                )
    return argv


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except (ChainFormatError, ChainValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, HalfLifeNotReached) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
