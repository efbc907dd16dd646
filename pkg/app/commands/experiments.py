import functools
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import click

from app.commands import outputs
from app.commands.deps import TrialData, build_run_spec, read_spec_file, trial_seeds
from app.core.config import settings
from app.core.errors import BadArgumentsError, SemiSupError, SolverNonConvergenceError
from app.schemas import ExperimentReport, RunSpec, SplitDataset
from app.service.semisup import PipelineResult, run_pipeline

logger = logging.getLogger(__name__)


# --- 1. Core operations ---
def _run_trial(spec: RunSpec, split: SplitDataset, seed: int, workers: int) -> PipelineResult:
    config = spec.pipeline_config(seed).model_copy(update={"workers": workers})
    return run_pipeline(spec.method, split, config, spec.confidence_quantile, spec.max_rounds)


def _map_trials(fn: Callable[[int], Tuple], seeds: Sequence[int], workers: int) -> List[Tuple]:
    """Trials may run concurrently; results come back in seed order."""
    if workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, seeds))
    return [fn(seed) for seed in seeds]


def _check_convergence(spec: RunSpec, reports: Sequence[ExperimentReport]) -> None:
    stuck = [r for r in reports if not r.converged]
    if stuck and spec.strict:
        raise SolverNonConvergenceError(
            f"{len(stuck)} trial(s) hit the SMO iteration limit (first: {stuck[0].method}, seed {stuck[0].seed})"
        )


def run(spec: RunSpec) -> Path:
    """
    Runs `spec.repeats` seeded trials and writes per-trial reports, trials.csv,
    aggregate.csv and, for 2-D data, plot data of the first trial.
    """
    data = TrialData(spec)
    seeds = trial_seeds(spec)
    inner_workers = 1 if len(seeds) > 1 else spec.workers

    def trial(seed: int):
        split = data.split(seed)
        return split, _run_trial(spec, split, seed, inner_workers)

    outcomes = _map_trials(trial, seeds, spec.workers)
    reports = [result.report for _, result in outcomes]

    directory = outputs.make_run_directory(spec.output_dir, f"{spec.experiment}_{spec.method}", spec.run_name)
    for report in reports:
        outputs.write_trial_report(directory, report)
    outputs.write_trials_csv(directory / "trials.csv", reports)
    summary = outputs.aggregate(reports)
    outputs.write_aggregate_csv(directory / "aggregate.csv", spec.experiment, [summary])

    first_split, first_result = outcomes[0]
    if first_split.dim == 2:
        outputs.write_plot_data(directory / f"plot_{first_result.report.seed}.csv", first_split, first_result)

    for line in outputs.summary_lines(spec.experiment, [summary]):
        logger.info(line)
    _check_convergence(spec, reports)
    return directory


def compare(specs: Sequence[RunSpec]) -> Path:
    """
    Runs every spec on identical splits (same dataset, seed and repeats) and
    writes one table with a row per method plus the quoted reference rows.
    """
    if not specs:
        raise BadArgumentsError("nothing to compare")
    base = specs[0]
    for other in specs[1:]:
        if other.dataset_key() != base.dataset_key():
            raise BadArgumentsError("compared specs must share the dataset and split settings")
        if other.seed != base.seed:
            raise BadArgumentsError(f"compared specs must share the seed ({base.seed} vs {other.seed})")
        if other.repeats != base.repeats:
            raise BadArgumentsError("compared specs must share the number of repeats")

    data = TrialData(base)
    seeds = trial_seeds(base)
    inner_workers = 1 if len(seeds) > 1 else base.workers

    def trial(seed: int):
        split = data.split(seed)
        return tuple(_run_trial(spec, split, seed, inner_workers).report for spec in specs)

    per_trial = _map_trials(trial, seeds, base.workers)
    directory = outputs.make_run_directory(base.output_dir, f"{base.experiment}_compare", base.run_name)
    aggregates = []
    all_reports = []
    for m, spec in enumerate(specs):
        reports = [row[m] for row in per_trial]
        all_reports.extend(reports)
        aggregates.append(outputs.aggregate(reports))
        for report in reports:
            outputs.write_trial_report(directory, report)
    outputs.write_trials_csv(directory / "trials.csv", all_reports)
    outputs.write_aggregate_csv(directory / "aggregate.csv", base.experiment, aggregates)
    outputs.write_comparison(directory / "comparison.txt", base.experiment, aggregates)

    for line in outputs.summary_lines(base.experiment, aggregates):
        logger.info(line)
    for spec in specs:
        _check_convergence(spec, [r for r in all_reports if r.method == spec.method])
    return directory


# --- 2. Click commands ---
def exits_with_code(fn):
    """Maps library errors to the process exit code they carry."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SemiSupError as exc:
            logger.error(exc.detail)
            raise SystemExit(exc.exit_code)

    return wrapper


SPEC_OPTIONS = [
    click.option("--spec", "spec_file", type=click.Path(dir_okay=False), help="key=value spec file"),
    click.option("--sigma", type=float),
    click.option("--sigma-grid", is_flag=False, flag_value=settings.SIGMA_GRID, default=None,
                 help="comma separated sigma values chosen by leave-one-out; bare flag uses the default grid"),
    click.option("--center/--no-center", "center_features", default=None,
                 help="shift features by the labeled+unlabeled mean before the PNN pass"),
    click.option("--kernel", type=click.Choice(["linear", "rbf"])),
    click.option("--c", "c", type=float),
    click.option("--gamma", type=float, help="RBF width; defaults to 1/d"),
    click.option("--tol", type=float),
    click.option("--max-iter", type=int),
    click.option("--labeled-per-class", type=int),
    click.option("--labeled-fraction", type=float),
    click.option("--n-per-class", type=int),
    click.option("--test-per-class", type=int),
    click.option("--noise", "noise_std", type=float),
    click.option("--train", "train_path", type=str),
    click.option("--test", "test_path", type=str),
    click.option("--label-offset", type=int),
    click.option("--confidence-quantile", type=float),
    click.option("--max-rounds", type=int),
    click.option("--seed", type=int),
    click.option("--repeats", type=int),
    click.option("--output-dir", type=str),
    click.option("--run-name", type=str),
    click.option("--strict/--no-strict", default=None),
    click.option("--workers", type=int),
    click.option("--debug/--no-debug", default=None),
]


def spec_options(fn):
    for option in reversed(SPEC_OPTIONS):
        fn = option(fn)
    return fn


EXPERIMENTS = click.Choice(["two-moons", "usps", "custom-file"])
METHODS = click.Choice(["pnn-training", "self-training", "supervised"])


@click.command("run")
@click.argument("experiment", type=EXPERIMENTS, required=False)
@click.argument("method", type=METHODS, required=False)
@spec_options
@exits_with_code
def run_command(experiment: Optional[str], method: Optional[str], spec_file: Optional[str], **flags):
    """Run seeded trials of one method on one experiment."""
    file_values = read_spec_file(spec_file) if spec_file else {}
    spec = build_run_spec(file_values, experiment=experiment, method=method, **flags)
    directory = run(spec)
    click.echo(str(directory))


@click.command("compare")
@click.argument("experiment", type=EXPERIMENTS, required=False)
@click.option("--method", "methods", type=METHODS, multiple=True,
              help="method to include; repeatable, defaults to all three")
@click.option("--spec-file", "spec_files", type=click.Path(dir_okay=False), multiple=True,
              help="one spec file per compared run; repeatable")
@spec_options
@exits_with_code
def compare_command(experiment, methods, spec_files, spec_file, **flags):
    """Compare methods on identical splits and write a results table."""
    shared = read_spec_file(spec_file) if spec_file else {}
    if spec_files:
        specs = [
            build_run_spec({**shared, **read_spec_file(path)}, experiment=experiment, **flags)
            for path in spec_files
        ]
    else:
        specs = [
            build_run_spec(shared, experiment=experiment, method=m, **flags)
            for m in (methods or ("pnn-training", "self-training", "supervised"))
        ]
    directory = compare(specs)
    click.echo(str(directory))
