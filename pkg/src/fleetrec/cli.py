"""Command-line interface.

Subcommands: build-utility, estimate-rank, complete, recommend, simulate,
evaluate. Settings resolve as explicit flags, then config-file entries,
then built-in defaults. Exit codes: 0 success, 1 validation or input
error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as fio
from .campaign import (
    CampaignConfig,
    SyntheticFleetSpec,
    draw_mask,
    generate_synthetic_fleet,
    run_baseline_campaign,
    run_campaign,
    select_full_fleet,
    select_limited_fleet,
)
from .completion import CompletionConfig, als_complete_with_trace, rank_spectrum
from .errors import NumericError, ValidationError
from .evaluation import comparison_report, evaluate_trace, report_rows
from .grid import index_grid, printer_grid, unflatten_index
from .matrix import MaskedMatrix


class _Parser(argparse.ArgumentParser):
    # argparse normally exits with status 2 on bad usage; route through
    # ValidationError so usage problems report as exit code 1
    def error(self, message):
        raise ValidationError(message)


def _setting(args, options, dest, cast, default):
    value = getattr(args, dest, None)
    if value is not None:
        return value
    key = "lambda" if dest == "lam" else dest
    if options and key in options:
        raw = options[key]
        try:
            if cast is bool:
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError as exc:
            raise ValidationError(f"config key {key}: bad value {raw!r}") from exc
    return default


def _load_options(args):
    if getattr(args, "config", None):
        return fio.parse_config_file(args.config)
    return {}


def _completion_config(args, options, matrix=None, rank_default=None):
    rank = _setting(args, options, "rank", int, rank_default)
    if rank is None:
        if matrix is None:
            raise ValidationError("a rank is required here")
        from .completion import estimate_rank

        rank = estimate_rank(matrix)
    return CompletionConfig(
        rank=rank,
        lam=_setting(args, options, "lam", float, 0.05),
        max_sweeps=_setting(args, options, "max_sweeps", int, 500),
        rel_tol=_setting(args, options, "rel_tol", float, 1e-6),
        seed=_setting(args, options, "seed", int, 0),
        init=_setting(args, options, "init", str, "svd"),
        workers=_setting(args, options, "workers", int, 1),
    )


def _resolve_grid(options, cols):
    grid = fio.grid_from_options(options)
    if grid is None:
        grid = printer_grid() if cols == 35 else index_grid(cols)
    if grid.flat_size != cols:
        raise ValidationError(
            f"grid has {grid.flat_size} cells but the matrix has {cols} columns"
        )
    return grid


def _print_table(rows):
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    for row in rows:
        print("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))


def cmd_build_utility(args) -> int:
    options = _load_options(args)
    scans = fio.read_scans_csv(args.scans)
    times = fio.read_times_csv(args.times)
    grid = fio.grid_from_options(options, printer_grid())
    weight = _setting(args, options, "quality_weight", float, None)
    fleet, quality_norm, time_norm = fio.build_utility_from_files(
        scans, times, grid, constant_weight=weight
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fio.save_matrix(fleet, out / "utility.csv")
    fio.save_matrix(quality_norm, out / "quality_norm.csv")
    fio.save_matrix(time_norm, out / "time_norm.csv")
    print(
        f"wrote {fleet.rows}x{fleet.cols} utility matrix "
        f"({fleet.observed_count} observed) to {out}"
    )
    return 0


def cmd_estimate_rank(args) -> int:
    m = fio.load_matrix(args.matrix)
    rank, eigenvalues, sigma = rank_spectrum(m)
    print(f"estimated rank: {rank}")
    print(f"kernel width sigma: {sigma:.6g}")
    rows = [["position", "eigenvalue", "gap"]]
    previous = None
    for i, ev in enumerate(eigenvalues):
        gap = "-" if previous is None else f"{ev - previous:.6f}"
        rows.append([str(i), f"{ev:.6f}", gap])
        previous = ev
    _print_table(rows)
    return 0


def cmd_complete(args) -> int:
    options = _load_options(args)
    m = fio.load_matrix(args.matrix)
    cfg = _completion_config(args, options, matrix=m)
    factors, completed, trace = als_complete_with_trace(m, cfg)
    out = args.output or str(Path(args.matrix).with_suffix("")) + "_completed.csv"
    fio.save_matrix(
        MaskedMatrix(completed, np.ones_like(completed, dtype=bool)), out
    )
    print(
        f"completed at rank {cfg.rank}, penalty {cfg.lam}: "
        f"{len(trace)} half-sweeps, final objective {trace[-1]:.6g}"
    )
    print(f"wrote {out}")
    return 0


def cmd_recommend(args) -> int:
    options = _load_options(args)
    m = fio.load_matrix(args.matrix)
    grid = _resolve_grid(options, m.cols)
    limited = _setting(args, options, "limited", int, None)
    if not (~m.mask).any():
        for k in range(m.rows):
            print(f"machine {k + 1}: exhausted")
        return 0
    cfg = _completion_config(args, options, matrix=m)
    _, u_hat, _ = als_complete_with_trace(m, cfg)
    if limited is not None:
        picks = select_limited_fleet(u_hat, m.mask, limited)
    else:
        picks = select_full_fleet(u_hat, m.mask)
    header = ["machine"]
    header += [f"{axis.name} ({axis.unit})" for axis in grid.axes]
    header += ["flat_index", "predicted"]
    rows = [header]
    chosen = {k: j for k, j in picks}
    machines = sorted(chosen) if limited is None else [k for k, _ in picks]
    for k in machines:
        j = chosen[k]
        _, physical = unflatten_index(grid, j)
        rows.append(
            [str(k + 1)]
            + [f"{v:g}" for v in physical]
            + [str(j), f"{u_hat[k, j]:.6g}"]
        )
    if limited is None:
        for k in range(m.rows):
            if k not in chosen:
                rows.append([str(k + 1)] + ["exhausted"] * (len(header) - 1))
    _print_table(rows)
    return 0


def cmd_simulate(args) -> int:
    options = _load_options(args)
    seed = _setting(args, options, "seed", int, 0)
    mask_fraction = _setting(args, options, "mask_fraction", float, 0.55)
    budget = _setting(args, options, "budget", int, 19)
    limited = _setting(args, options, "limited", int, None)
    regret_variant = _setting(args, options, "regret_variant", str, "true")
    local_rank = _setting(args, options, "local_rank", int, 2)
    warm_start = _setting(args, options, "warm_start", bool, False)
    noise_std = _setting(args, options, "noise_std", float, 0.0)
    true_rank = _setting(args, options, "true_rank", int, 3)
    factor_scale = _setting(args, options, "factor_scale", float, 1.0)

    truth_file = getattr(args, "truth", None)
    if truth_file:
        loaded = fio.load_matrix(truth_file)
        if not loaded.mask.all():
            raise ValidationError("ground-truth matrix must be fully observed")
        truth = loaded.values
        grid = _resolve_grid(options, loaded.cols)
        initial_mask = draw_mask(
            np.random.default_rng(seed), loaded.rows, loaded.cols, mask_fraction
        )
        synthetic = None
    else:
        grid = fio.grid_from_options(options, printer_grid())
        machines = _setting(args, options, "machines", int, 10)
        synthetic = SyntheticFleetSpec(
            machines=machines,
            grid_size=grid.flat_size,
            true_rank=true_rank,
            factor_scale=factor_scale,
            noise_std=noise_std,
            mask_fraction=mask_fraction,
            seed=seed,
        )
        truth, initial = generate_synthetic_fleet(synthetic)
        initial_mask = initial.mask

    completion = _completion_config(args, options, rank_default=3)
    campaign_cfg = CampaignConfig(
        budget=budget,
        completion=completion,
        mode="limited" if limited is not None else "full",
        subset_size=limited,
        regret_variant=regret_variant,
        seed=seed,
        local_rank=local_rank,
        warm_start=warm_start,
    )
    run_config = {
        "machines": int(truth.shape[0]),
        "budget": budget,
        "mode": campaign_cfg.mode,
        "subset_size": limited,
        "rank": completion.rank,
        "lambda": completion.lam,
        "mask_fraction": mask_fraction,
        "noise_std": noise_std,
        "true_rank": true_rank,
        "factor_scale": factor_scale,
        "seed": seed,
        "regret_variant": regret_variant,
        "local_rank": local_rank,
        "warm_start": warm_start,
        "truth_file": str(truth_file) if truth_file else None,
        "grid": [
            {"name": a.name, "unit": a.unit, "values": list(a.values)}
            for a in grid.axes
        ],
    }

    collab = run_campaign(truth, initial_mask.copy(), campaign_cfg, grid)
    baseline = run_baseline_campaign(truth, initial_mask.copy(), campaign_cfg, grid)
    collab.config = {**collab.config, "run": run_config}
    baseline.config = {**baseline.config, "run": run_config}

    collab_eval = evaluate_trace(collab, truth, regret_variant)
    base_eval = evaluate_trace(baseline, truth, regret_variant)
    report = comparison_report(collab_eval, base_eval, config=run_config)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fio.save_trace(collab, out / "collaborative_trace.json")
    fio.save_trace(baseline, out / "baseline_trace.json")
    fio.save_report_json(report, out / "report.json")
    fio.save_report_csv(report_rows(report), out / "report.csv")

    print(f"collaborative mean trials:     {report['collaborative']['mean_trials']:.4g}")
    print(
        f"non-collaborative mean trials: {report['non_collaborative']['mean_trials']:.4g}"
    )
    print(f"wrote traces and report to {out}")
    return 0


def cmd_evaluate(args) -> int:
    trace = fio.load_trace(args.trace)
    loaded = fio.load_matrix(args.truth)
    if not loaded.mask.all():
        raise ValidationError("ground-truth matrix must be fully observed")
    variant = getattr(args, "regret_variant", None)
    collab_eval = evaluate_trace(trace, loaded.values, variant)
    base_eval = None
    if getattr(args, "baseline", None):
        base_eval = evaluate_trace(fio.load_trace(args.baseline), loaded.values, variant)
    report = comparison_report(
        collab_eval,
        base_eval,
        config={"trace": str(args.trace), "truth": str(args.truth)},
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fio.save_report_json(report, out / "report.json")
    fio.save_report_csv(report_rows(report), out / "report.csv")
    _print_table(report_rows(report))
    print(f"wrote report to {out}")
    return 0


def _add_completion_flags(parser):
    parser.add_argument("--rank", type=int, help="factor rank r")
    parser.add_argument("--lambda", dest="lam", type=float, help="ridge penalty")
    parser.add_argument("--max-sweeps", dest="max_sweeps", type=int)
    parser.add_argument("--rel-tol", dest="rel_tol", type=float)
    parser.add_argument("--init", choices=("svd", "random"))
    parser.add_argument("--workers", type=int, help="solver thread count")
    parser.add_argument("--seed", type=int)


def _build_parser() -> _Parser:
    parser = _Parser(prog="fleetrec", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("build-utility", help="scans + times -> utility matrix")
    p.add_argument("--scans", required=True)
    p.add_argument("--times", required=True)
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--quality-weight", dest="quality_weight", type=float,
                   help="constant quality weight instead of the exponential map")
    p.add_argument("--out-dir", dest="out_dir", default=".")
    p.set_defaults(func=cmd_build_utility)

    p = sub.add_parser("estimate-rank", help="spectral rank estimate of a matrix CSV")
    p.add_argument("matrix")
    p.set_defaults(func=cmd_estimate_rank)

    p = sub.add_parser("complete", help="fill a matrix CSV by low-rank completion")
    p.add_argument("matrix")
    p.add_argument("--config")
    p.add_argument("-o", "--output")
    _add_completion_flags(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("recommend", help="next experiment per machine")
    p.add_argument("matrix")
    p.add_argument("--config")
    p.add_argument("--limited", type=int, help="recommend for the top c machines only")
    _add_completion_flags(p)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("simulate", help="run collaborative and baseline campaigns")
    p.add_argument("--config")
    p.add_argument("--truth", help="fully observed ground-truth matrix CSV")
    p.add_argument("--machines", type=int)
    p.add_argument("--true-rank", dest="true_rank", type=int)
    p.add_argument("--factor-scale", dest="factor_scale", type=float)
    p.add_argument("--noise-std", dest="noise_std", type=float)
    p.add_argument("--mask-fraction", dest="mask_fraction", type=float)
    p.add_argument("--budget", type=int, help="campaign rounds")
    p.add_argument("--limited", type=int, help="machines per round")
    p.add_argument("--regret-variant", dest="regret_variant",
                   choices=("true", "predicted"))
    p.add_argument("--local-rank", dest="local_rank", type=int)
    p.add_argument("--warm-start", dest="warm_start", action="store_const", const=True)
    p.add_argument("--out-dir", dest="out_dir", default=".")
    _add_completion_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="metrics for saved traces")
    p.add_argument("--trace", required=True)
    p.add_argument("--baseline", help="second trace for a comparison report")
    p.add_argument("--truth", required=True)
    p.add_argument("--regret-variant", dest="regret_variant",
                   choices=("true", "predicted"))
    p.add_argument("--out-dir", dest="out_dir", default=".")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help()
            return 1
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
