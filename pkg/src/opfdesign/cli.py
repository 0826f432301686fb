"""Command-line entry point: run/resume studies, evaluate the manual
baseline sweep, analyze significance, verify extracted designs, and emit
plots/reports.

Exit codes: 0 success, 1 runtime trial failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import CRITERIA, SplitCriterion, significance_report
from .design import (
    BASELINE_PENALTY_WEIGHTS,
    BEST_UTOPIA_BASELINE_WEIGHT,
    baseline_design,
)
from .environment import OpfEnv
from .errors import ConfigurationError, TrialFailure
from .agent import train
from .metrics import aggregate_checkpoints, evaluate_policy
from .plotting import learning_curves_svg, pareto_scatter_svg, trials_to_csv
from .search import (
    Study,
    StudyConfig,
    StudyContext,
    StudyStore,
    TrialRecord,
    _trial_norm_stats,
    extract_design,
    pareto_front,
    run_study,
    run_trial,
    trial_scores,
    trial_seed,
)

OUT_ENV_VAR = "OPFDESIGN_OUT"

BASELINE_FILE = "baseline.jsonl"

VERIFY_CHECKPOINT_FRACTIONS = tuple((i + 1) / 8 for i in range(8))


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV_VAR, "studies"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opfdesign",
        description="Multi-objective search over RL environment designs for power-flow tasks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    study = sub.add_parser("study", help="run or resume a design study")
    _add_run_flags(study)
    study.add_argument("--dry-run", action="store_true", help="validate the config without training")

    base = sub.add_parser("baseline", help="evaluate the manual design's penalty-weight sweep")
    _add_run_flags(base)

    analyze = sub.add_parser("analyze", help="significance report + Pareto scatter")
    analyze.add_argument("studies", nargs="+", help="study directories")
    analyze.add_argument("--criteria", nargs="+", default=list(CRITERIA), choices=CRITERIA)
    analyze.add_argument("--top-fraction", type=float, default=0.2)
    analyze.add_argument("--out", default=None, help="output directory (default: first study dir)")

    verify = sub.add_parser("verify", help="retrain an extracted design with an extended budget")
    verify.add_argument("study", help="study directory")
    verify.add_argument("--criterion", default="utopia", choices=("validity", "optimization", "utopia", "pareto"))
    verify.add_argument("--k", type=int, default=5, help="number of top trials to combine")
    verify.add_argument("--steps", type=int, default=100_000)
    verify.add_argument("--seeds", type=int, default=3)

    plot = sub.add_parser("plot", help="CSV + SVG emission from the study store")
    plot.add_argument("study", help="study directory")

    return parser


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--benchmark", default=None,
                   help="voltage-control | load-shedding | economic-dispatch | q-market | max-renewables")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seeds", type=int, default=None, help="training seeds per design")
    p.add_argument("--steps", type=int, default=None, help="training steps per run")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=None, help="global study seed")
    p.add_argument("--out", default=None, help="study directory")
    p.add_argument("--config", default=None, help="JSON file with StudyConfig fields")


def resolve_config(args, for_baseline: bool = False) -> tuple[StudyConfig, Path]:
    overrides = {}
    if args.config:
        with open(args.config) as fh:
            overrides.update(json.load(fh))
    if args.benchmark is not None:
        overrides["benchmark"] = args.benchmark
    if args.trials is not None:
        overrides["n_trials"] = args.trials
    if args.seeds is not None:
        overrides["seeds_per_trial"] = args.seeds
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.seed is not None:
        overrides["study_seed"] = args.seed

    out = Path(args.out) if args.out else None
    if out is not None and (out / "config.json").exists():
        config = StudyStore(out).load_config()
        blocked = {k: v for k, v in overrides.items()
                   if k in config.to_dict() and config.to_dict()[k] != v and k != "seeds_per_trial"}
        if blocked and not for_baseline:
            raise ConfigurationError(
                f"study at {out} already configured; conflicting overrides: {sorted(blocked)}"
            )
        if for_baseline and "seeds_per_trial" in overrides:
            config = replace(config, seeds_per_trial=overrides["seeds_per_trial"])
        return config, out
    if "benchmark" not in overrides:
        raise ConfigurationError("--benchmark is required for a new study")
    config = StudyConfig.from_dict(overrides)
    if out is None:
        out = default_out_root() / config.benchmark
    return config, out


def _print_trial(record: TrialRecord) -> None:
    m = record.metrics
    omega = "-" if m is None else f"{m.invalid_share:+.4f}"
    delta = "-" if m is None or m.mean_error is None else f"{m.mean_error:+.4g}"
    print(
        f"  trial {record.trial_id:>3}  {record.status:<8}  invalid_share={omega:>9}  "
        f"mean_error={delta:>10}  [{record.wall_time:6.1f}s]"
    )


def cmd_study(args) -> int:
    config, out = resolve_config(args)
    if args.dry_run:
        config.design_space()
        config.ddpg_config()
        from .problems import ScaleConfig, make_benchmark

        problem = make_benchmark(config.benchmark, ScaleConfig(n_actuators=config.n_actuators))
        print(f"config ok: {config.benchmark}, {config.n_trials} trials x "
              f"{config.seeds_per_trial} seeds x {config.steps} steps, "
              f"{problem.action_dim}-dim actions; store: {out}")
        return 0
    print(f"study: {config.benchmark} -> {out}")
    print(f"  trial    status    objective metrics                    wall time")
    study = run_study(config, out, workers=args.workers, progress=_print_trial)
    front = pareto_front(study.trials)
    n_failed = sum(t.status == "failed" for t in study.trials)
    print(f"done: {len(study.trials)} trials, front size {len(front)}, {n_failed} failed")
    return 1 if n_failed else 0


def cmd_baseline(args) -> int:
    config, out = resolve_config(args, for_baseline=True)
    if args.seeds is None and config.seeds_per_trial < 10:
        config = replace(config, seeds_per_trial=10)
    store = StudyStore(out, trials_filename=BASELINE_FILE)
    if not store.config_path.exists():
        store.save_config(config)
    ctx = StudyContext.build(config, out)
    existing = store.load_trials()
    print(f"baseline sweep: {config.benchmark}, weights {BASELINE_PENALTY_WEIGHTS}, "
          f"{config.seeds_per_trial} seeds -> {out / BASELINE_FILE}")
    n_failed = 0
    for i, weight in enumerate(BASELINE_PENALTY_WEIGHTS):
        if i < len(existing):
            continue
        record = run_trial(
            ctx, baseline_design(weight), trial_id=i, store_dir=out,
            workers=args.workers, provenance="baseline",
        )
        store.append_trial(record)
        _print_trial(record)
        n_failed += record.status == "failed"
    return 1 if n_failed else 0


def load_study(path) -> tuple[StudyConfig, list, list]:
    store = StudyStore(path)
    if not store.config_path.exists():
        raise ConfigurationError(f"{path} holds no study (missing config.json)")
    config = store.load_config()
    trials = store.load_trials()
    baseline_trials = StudyStore(path, trials_filename=BASELINE_FILE).load_trials()
    return config, trials, baseline_trials


def cmd_analyze(args) -> int:
    studies = {}
    baselines = {}
    configs = {}
    for path in args.studies:
        config, trials, baseline_trials = load_study(path)
        name = config.benchmark if config.benchmark not in studies else str(path)
        studies[name] = trials
        baselines[name] = baseline_trials
        configs[name] = (config, Path(path))
    out = Path(args.out) if args.out else Path(args.studies[0]) / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    criteria = [SplitCriterion(kind, args.top_fraction) for kind in args.criteria]
    space = next(iter(configs.values()))[0].design_space()
    report = significance_report(studies, space, criteria)
    report.save_json(out / "significance.json")
    report.save_csv(out / "significance.csv")
    for name, trials in studies.items():
        svg = pareto_scatter_svg(trials, baselines[name], title=f"{name}: search vs manual design")
        (out / f"pareto_{name}.svg").write_text(svg)
        trials_to_csv(trials + baselines[name], out / f"trials_{name}.csv")
    n_sig = len(report.significant_entries())
    print(f"analysis -> {out} ({len(report.entries)} tests, {n_sig} significant at {report.alpha})")
    return 0


def run_verification(
    study_dir,
    criterion: str = "utopia",
    k: int = 5,
    steps: int = 100_000,
    n_seeds: int = 3,
    ddpg_variants: dict | None = None,
) -> dict:
    """Retrain the extracted design and the manual baseline on the full
    training data, evaluate on the held-out test split, and emit learning
    curves.  Returns the curve table."""
    study_dir = Path(study_dir)
    config, trials, baseline_trials = load_study(study_dir)
    space = config.design_space()
    extracted = extract_design(trials, space, criterion=criterion, k=k)

    weight = BEST_UTOPIA_BASELINE_WEIGHT.get(config.benchmark)
    if weight is None and baseline_trials:
        scores = trial_scores(baseline_trials, "utopia")
        weight = baseline_trials[int(np.argmin(scores))].design.penalty_weight
    manual = baseline_design(weight if weight is not None else 0.5)

    # full available training data; metrics move to the untouched test split
    n_rest = config.dataset_steps - int(round(config.dataset_steps * 0.2))
    verify_config = replace(
        config,
        steps=steps,
        seeds_per_trial=n_seeds,
        train_size=n_rest - config.val_size,
        checkpoint_fractions=VERIFY_CHECKPOINT_FRACTIONS,
    )
    ctx = StudyContext.build(verify_config, study_dir, modes=("test",))
    if ddpg_variants is None:
        base = verify_config.ddpg
        wide = dict(base)
        wide["hidden"] = [2 * h for h in base.get("hidden", [64, 64])]
        ddpg_variants = {"default": base, "wide": wide}

    out = study_dir / "verify"
    out.mkdir(exist_ok=True)
    with open(out / "design.json", "w") as fh:
        json.dump(
            {"criterion": criterion, "k": k, "extracted": extracted.to_dict(),
             "manual": manual.to_dict(), "manual_penalty_weight": manual.penalty_weight},
            fh, indent=2,
        )

    curves = []  # rows: design, variant, seed_index, fraction, steps, invalid_share, mean_error
    failures = 0
    records = []
    for design_name, design in (("extracted", extracted), ("manual", manual)):
        for variant_name, ddpg_overrides in ddpg_variants.items():
            run_config = replace(verify_config, ddpg=dict(ddpg_overrides))
            run_ctx = StudyContext(
                config=run_config, problem=ctx.problem, dataset=ctx.dataset,
                splits=ctx.splits, baselines=ctx.baselines,
            )
            stats = _trial_norm_stats(run_ctx, design, trial_id=0)
            per_seed_pairs = []
            for s in range(n_seeds):
                seed = trial_seed(run_config.study_seed, 10_000 + s, 0)
                env = OpfEnv(run_ctx.problem, design, run_ctx.dataset, run_ctx.splits, stats, seed=seed)
                env.attach_baseline("test", run_ctx.baselines["test"])
                try:
                    result = train(env, run_config.ddpg_config(), steps, seed,
                                   VERIFY_CHECKPOINT_FRACTIONS)
                except TrialFailure:
                    failures += 1
                    continue
                reports = []
                for fraction, policy in result.checkpoints:
                    report = evaluate_policy(policy, env, "test")
                    reports.append(report)
                    m = report.metrics
                    curves.append({
                        "design": design_name, "variant": variant_name, "seed_index": s,
                        "fraction": fraction, "steps": policy.steps,
                        "invalid_share": m.invalid_share,
                        "mean_error": m.mean_error,
                    })
                per_seed_pairs.append(aggregate_checkpoints(reports))
            if per_seed_pairs:
                from .metrics import aggregate_seeds

                mean, std = aggregate_seeds(per_seed_pairs)
                records.append({
                    "design": design_name, "variant": variant_name,
                    "invalid_share": mean.invalid_share, "mean_error": mean.mean_error,
                    "invalid_share_std": std.invalid_share, "mean_error_std": std.mean_error,
                })

    _write_curves(out, curves, records)
    return {"curves": curves, "records": records, "failures": failures,
            "extracted": extracted, "manual": manual, "out": out}


def _write_curves(out: Path, curves, records) -> None:
    import csv as _csv

    with open(out / "curves.csv", "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["design", "variant", "seed_index", "fraction", "steps",
                         "invalid_share", "mean_error"])
        for row in curves:
            writer.writerow([row["design"], row["variant"], row["seed_index"],
                             row["fraction"], row["steps"],
                             f"{row['invalid_share']:.6g}",
                             "" if row["mean_error"] is None else f"{row['mean_error']:.6g}"])
    with open(out / "records.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
    for metric in ("invalid_share", "mean_error"):
        series = []
        for design_name in ("extracted", "manual"):
            for variant_name in sorted({row["variant"] for row in curves}):
                rows = [r for r in curves if r["design"] == design_name and r["variant"] == variant_name]
                if not rows:
                    continue
                fractions = sorted({r["fraction"] for r in rows})
                xs, ys = [], []
                for f in fractions:
                    vals = [r[metric] for r in rows if r["fraction"] == f and r[metric] is not None]
                    if vals:
                        xs.append(int(np.mean([r["steps"] for r in rows if r["fraction"] == f])))
                        ys.append(float(np.mean(vals)))
                if xs:
                    series.append((f"{design_name}/{variant_name}", xs, ys))
        svg = learning_curves_svg(series, metric.replace("_", " "),
                                  title=f"verification: {metric.replace('_', ' ')}")
        (out / f"curves_{metric}.svg").write_text(svg)


def cmd_verify(args) -> int:
    result = run_verification(
        args.study, criterion=args.criterion, k=args.k, steps=args.steps,
        n_seeds=args.seeds,
    )
    print(f"verification -> {result['out']}")
    for r in result["records"]:
        me = "-" if r["mean_error"] is None else f"{r['mean_error']:+.4g}"
        print(f"  {r['design']:>9}/{r['variant']:<8} invalid_share={r['invalid_share']:+.4f} "
              f"mean_error={me}")
    return 1 if result["failures"] else 0


def cmd_plot(args) -> int:
    config, trials, baseline_trials = load_study(args.study)
    out = Path(args.study) / "plots"
    out.mkdir(exist_ok=True)
    trials_to_csv(trials + baseline_trials, out / "trials.csv")
    svg = pareto_scatter_svg(trials, baseline_trials, title=f"{config.benchmark}: study results")
    (out / "pareto.svg").write_text(svg)
    print(f"plots -> {out}")
    return 0


COMMANDS = {
    "study": cmd_study,
    "baseline": cmd_baseline,
    "analyze": cmd_analyze,
    "verify": cmd_verify,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except TrialFailure as exc:
        print(f"trial failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
