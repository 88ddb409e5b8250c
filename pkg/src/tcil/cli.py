"""Configuration-driven experiment runner.

Config files are flat ``key = value`` text; ``#`` starts a comment. Unknown
keys are rejected. Schema (all keys optional, defaults in parentheses):

  stream source      num_tasks (5), classes_per_task (2), input_dim (8),
                     train_per_class (200), valid_per_class (40),
                     test_per_class (100), blob_spread (0.35),
                     stream_seed (0)
                     -- or csv_path plus csv_train_frac (0.8),
                     csv_valid_frac (0.2)
  model              hidden_dim (32), feature_dim (16)
  training           epochs (40), batch_size (32), learning_rate (0.001),
                     weight_decay (0.0002), optimizer (adam)
  memory             memory_capacity (60)
  calibration        calibrators (all, comma-separated), bins (10),
                     eps_low (0.0), eps_high (1.0),
                     magsearch_tolerance (0.001), magsearch_max_iters (32),
                     clip (true)
  replication        seeds (0,1,2,3,4)

Per experiment seed the runner regenerates the stream, trains each task
with replay, updates memory, and emits one record per
(seed, task, calibrator). Metrics output is one record per line of
``key=value`` pairs; per-bin statistics go to a separate CSV.

Exit codes: 0 ok, 2 config error, 3 data-format error, 4 numeric failure.
Set TCIL_LOG=DEBUG|INFO|... to change log verbosity (output is unchanged).
"""

from __future__ import annotations

import logging
import math
import os
import sys
from dataclasses import dataclass, field, fields, replace

import click
import numpy as np

from . import calib, cil, datagen, nnet, perturb
from .errors import ConfigError, DataFormatError, NumericError

logger = logging.getLogger(__name__)

CALIBRATORS = (
    "vanilla",
    "ts_new_valid",
    "tcil",
    "tcil_random",
    "tcil_closest",
    "tcil_farthest",
    "optimal_ts_oracle",
)

_POLICY_FOR_CALIBRATOR = {
    "tcil": "tcil",
    "tcil_random": "random_class",
    "tcil_closest": "closest_only",
    "tcil_farthest": "farthest_only",
}

DEFAULT_MEMORY_CAPACITY = 60


@dataclass(frozen=True)
class ExperimentConfig:
    stream: datagen.StreamConfig = datagen.StreamConfig()
    csv_path: str | None = None
    csv_fractions: tuple[float, float] = (0.8, 0.2)
    train: cil.TrainConfig = cil.TrainConfig()
    feature_dims: tuple[int, ...] = nnet.DEFAULT_FEATURE_DIMS
    memory_capacity: int = DEFAULT_MEMORY_CAPACITY
    calibrators: tuple[str, ...] = CALIBRATORS
    bins: int = calib.DEFAULT_NUM_BINS
    magsearch: perturb.MagSearchConfig = perturb.MagSearchConfig()
    clip: bool = True
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        if not self.calibrators:
            raise ConfigError("calibrators: must not be empty")
        if not self.seeds:
            raise ConfigError("seeds: must not be empty")
        for name in self.calibrators:
            if name not in CALIBRATORS:
                raise ConfigError(
                    f"calibrators: unknown calibrator {name!r}; valid: {', '.join(CALIBRATORS)}"
                )
        if self.memory_capacity < 1:
            raise ConfigError("memory_capacity: must be >= 1")
        if self.bins < 1:
            raise ConfigError("bins: must be >= 1")


def default_experiment_config(**overrides) -> ExperimentConfig:
    return replace(ExperimentConfig(), **overrides) if overrides else ExperimentConfig()


@dataclass(frozen=True)
class MetricsRecord:
    seed: int
    task_index: int
    calibrator: str
    temperature: float
    eps_adv: float | None
    accuracy: float
    per_task_accuracy: dict[int, float]
    ece_percent: float
    aece_percent: float
    bins: list[calib.BinRow] = field(default_factory=list)


# --- config file parsing ---------------------------------------------------

_INT_KEYS = {
    "num_tasks", "classes_per_task", "input_dim", "train_per_class",
    "valid_per_class", "test_per_class", "stream_seed", "epochs",
    "batch_size", "train_seed", "hidden_dim", "feature_dim",
    "memory_capacity", "bins", "magsearch_max_iters",
}
_FLOAT_KEYS = {
    "blob_spread", "learning_rate", "weight_decay", "csv_train_frac",
    "csv_valid_frac", "eps_low", "eps_high", "magsearch_tolerance",
}
_STR_KEYS = {"optimizer", "csv_path"}
_BOOL_KEYS = {"clip"}
_LIST_KEYS = {"calibrators", "seeds"}
_ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _BOOL_KEYS | _LIST_KEYS


def _parse_value(key: str, raw: str, line_num: int):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _BOOL_KEYS:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"expected true/false, got {raw!r}")
        if key in _LIST_KEYS:
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            return tuple(int(p) for p in parts) if key == "seeds" else tuple(parts)
        return raw
    except ValueError as exc:
        raise ConfigError(f"line {line_num}: {key}: {exc}") from exc


def parse_config(text: str) -> ExperimentConfig:
    """Build an ExperimentConfig from flat key-value text."""
    values: dict[str, object] = {}
    for line_num, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_num}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {line_num}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {line_num}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw, line_num)

    def pop(key, default):
        return values.pop(key, default)

    try:
        stream = datagen.StreamConfig(
            num_tasks=pop("num_tasks", 5),
            classes_per_task=pop("classes_per_task", 2),
            input_dim=pop("input_dim", 8),
            train_per_class=pop("train_per_class", 200),
            valid_per_class=pop("valid_per_class", 40),
            test_per_class=pop("test_per_class", 100),
            blob_spread=pop("blob_spread", 0.35),
            seed=pop("stream_seed", 0),
        )
        train = cil.TrainConfig(
            epochs=pop("epochs", 40),
            batch_size=pop("batch_size", 32),
            learning_rate=pop("learning_rate", 1e-3),
            weight_decay=pop("weight_decay", 2e-4),
            optimizer=pop("optimizer", "adam"),
            seed=pop("train_seed", 0),
        )
        magsearch = perturb.MagSearchConfig(
            eps_low=pop("eps_low", 0.0),
            eps_high=pop("eps_high", 1.0),
            tolerance=pop("magsearch_tolerance", 1e-3),
            max_iters=pop("magsearch_max_iters", 32),
        )
        config = ExperimentConfig(
            stream=stream,
            csv_path=pop("csv_path", None),
            csv_fractions=(pop("csv_train_frac", 0.8), pop("csv_valid_frac", 0.2)),
            train=train,
            feature_dims=(pop("hidden_dim", 32), pop("feature_dim", 16)),
            memory_capacity=pop("memory_capacity", DEFAULT_MEMORY_CAPACITY),
            calibrators=pop("calibrators", CALIBRATORS),
            bins=pop("bins", calib.DEFAULT_NUM_BINS),
            magsearch=magsearch,
            clip=pop("clip", True),
            seeds=pop("seeds", (0, 1, 2, 3, 4)),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    assert not values, f"unconsumed keys: {sorted(values)}"
    return config


# --- experiment execution ---------------------------------------------------

def _derived_seed(seed: int, salt: int, task_index: int = 0) -> int:
    return seed * 100_003 + salt * 1_009 + task_index


def build_stream(config: ExperimentConfig, seed: int) -> datagen.TaskStream:
    """Stream for one experiment seed; the seed replaces the stream's own."""
    if config.csv_path is not None:
        return datagen.load_csv_stream(
            config.csv_path, config.stream.num_tasks, config.csv_fractions, seed
        )
    return datagen.gen_gaussian_stream(replace(config.stream, seed=seed))


def train_stream(
    stream: datagen.TaskStream, config: ExperimentConfig, seed: int
) -> list[cil.IncrementalState]:
    """Train all tasks in order; returns the state (memory already updated)
    after each task."""
    state = cil.IncrementalState.fresh(config.memory_capacity, config.feature_dims)
    states = []
    for task in stream.tasks:
        train_cfg = replace(
            config.train, seed=config.train.seed + _derived_seed(seed, 1, task.index)
        )
        state = cil.train_task(state, task, train_cfg)
        memory = cil.update_memory(
            state.memory, task.train, task.classes, seed=_derived_seed(seed, 2, task.index)
        )
        state = replace(state, memory=memory)
        states.append(state)
    return states


def _calibrator_temperature(
    name: str,
    state: cil.IncrementalState,
    stream: datagen.TaskStream,
    config: ExperimentConfig,
    seed: int,
) -> tuple[float, float | None]:
    t = state.task_index
    if name == "vanilla":
        return 1.0, None
    if name == "ts_new_valid":
        xs, ys = datagen.stack_samples(stream.valid_for_task(t))
        logits = nnet.forward_batch(state.model, xs).logits
        return calib.temp_opt(list(zip(logits, ys.tolist()))), None
    if name == "optimal_ts_oracle":
        return calib.optimal_ts_oracle(state.model, stream.cumulative_test(t)), None
    policy = perturb.DirectionPolicy(
        variant=_POLICY_FOR_CALIBRATOR[name], seed=_derived_seed(seed, 3, t)
    )
    temperature, report = perturb.tcil_temperature(
        state, stream.valid_for_task(t), policy, config.magsearch, clip=config.clip
    )
    return temperature, report.eps_adv


def run_stream(
    stream: datagen.TaskStream, config: ExperimentConfig, seed: int
) -> list[MetricsRecord]:
    records = []
    for state in train_stream(stream, config, seed):
        t = state.task_index
        test_set = stream.cumulative_test(t)
        for name in config.calibrators:
            temperature, eps_adv = _calibrator_temperature(name, state, stream, config, seed)
            if not math.isfinite(temperature):
                raise NumericError(f"non-finite temperature from {name} at task {t}")
            accuracy, per_task = cil.evaluate(
                state.model, test_set, temperature, stream.task_of_label
            )
            report = calib.calibration_report(state.model, test_set, temperature, config.bins)
            records.append(
                MetricsRecord(
                    seed=seed,
                    task_index=t,
                    calibrator=name,
                    temperature=temperature,
                    eps_adv=eps_adv,
                    accuracy=accuracy,
                    per_task_accuracy=per_task,
                    ece_percent=100.0 * report.ece,
                    aece_percent=100.0 * report.aece,
                    bins=report.bins,
                )
            )
        logger.info("seed %d task %d done", seed, t)
    return records


def run_experiment(config: ExperimentConfig) -> list[MetricsRecord]:
    """All seeds; records ordered by (seed, task, calibrator in config order)."""
    records = []
    for seed in config.seeds:
        stream = build_stream(config, seed)
        records.extend(run_stream(stream, config, seed))
    return records


# --- record serialization ----------------------------------------------------

def format_record(record: MetricsRecord) -> str:
    parts = [
        f"seed={record.seed}",
        f"task={record.task_index}",
        f"calibrator={record.calibrator}",
        f"temperature={record.temperature!r}",
    ]
    if record.eps_adv is not None:
        parts.append(f"eps_adv={record.eps_adv!r}")
    parts.append(f"accuracy={record.accuracy!r}")
    for t in sorted(record.per_task_accuracy):
        parts.append(f"acc_task_{t}={record.per_task_accuracy[t]!r}")
    parts.append(f"ece_percent={record.ece_percent!r}")
    parts.append(f"aece_percent={record.aece_percent!r}")
    return " ".join(parts)


def format_records(records) -> str:
    return "".join(format_record(r) + "\n" for r in records)


def parse_records(text: str) -> list[MetricsRecord]:
    """Read back metrics lines (bin stats are not carried in the line format)."""
    records = []
    for line_num, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        kv = {}
        for token in line.split():
            if "=" not in token:
                raise DataFormatError(f"row {line_num}: bad token {token!r}")
            key, _, value = token.partition("=")
            kv[key] = value
        try:
            per_task = {
                int(k[len("acc_task_"):]): float(v)
                for k, v in kv.items()
                if k.startswith("acc_task_")
            }
            records.append(
                MetricsRecord(
                    seed=int(kv["seed"]),
                    task_index=int(kv["task"]),
                    calibrator=kv["calibrator"],
                    temperature=float(kv["temperature"]),
                    eps_adv=float(kv["eps_adv"]) if "eps_adv" in kv else None,
                    accuracy=float(kv["accuracy"]),
                    per_task_accuracy=per_task,
                    ece_percent=float(kv["ece_percent"]),
                    aece_percent=float(kv["aece_percent"]),
                )
            )
        except (KeyError, ValueError) as exc:
            raise DataFormatError(f"row {line_num}: {exc}") from exc
    return records


def format_bins_csv(records) -> str:
    lines = ["bin_lower,bin_upper,count,accuracy,confidence"]
    for record in records:
        lines.append(
            f"# seed={record.seed} task={record.task_index} calibrator={record.calibrator}"
        )
        for row in record.bins:
            lines.append(
                f"{row.lower!r},{row.upper!r},{row.count},{row.accuracy!r},{row.confidence!r}"
            )
    return "\n".join(lines) + "\n"


# --- summaries ----------------------------------------------------------------

@dataclass(frozen=True)
class SummaryRow:
    calibrator: str
    final_accuracy_mean: float
    final_accuracy_std: float
    avg_ece_mean: float
    avg_ece_std: float
    avg_aece_mean: float
    avg_aece_std: float


def summarize(records) -> list[SummaryRow]:
    """Across-seed mean/std of final-task accuracy and of the per-seed
    average-over-tasks ECE/AECE. Calibrators keep first-appearance order."""
    records = list(records)
    if not records:
        raise ValueError("no records to summarize")
    order: list[str] = []
    for r in records:
        if r.calibrator not in order:
            order.append(r.calibrator)
    final_task = max(r.task_index for r in records)
    rows = []
    for name in order:
        mine = [r for r in records if r.calibrator == name]
        seeds = sorted({r.seed for r in mine})
        final_acc = [
            next(r.accuracy for r in mine if r.seed == s and r.task_index == final_task)
            for s in seeds
        ]
        avg_ece = [
            float(np.mean([r.ece_percent for r in mine if r.seed == s])) for s in seeds
        ]
        avg_aece = [
            float(np.mean([r.aece_percent for r in mine if r.seed == s])) for s in seeds
        ]
        rows.append(
            SummaryRow(
                calibrator=name,
                final_accuracy_mean=float(np.mean(final_acc)),
                final_accuracy_std=float(np.std(final_acc)),
                avg_ece_mean=float(np.mean(avg_ece)),
                avg_ece_std=float(np.std(avg_ece)),
                avg_aece_mean=float(np.mean(avg_aece)),
                avg_aece_std=float(np.std(avg_aece)),
            )
        )
    return rows


def format_summary(rows) -> str:
    header = f"{'calibrator':<20} {'final_acc':>18} {'avg_ece_%':>18} {'avg_aece_%':>18}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row.calibrator:<20}"
            f" {row.final_accuracy_mean:>9.4f} ±{row.final_accuracy_std:.4f}"
            f" {row.avg_ece_mean:>10.3f} ±{row.avg_ece_std:.3f}"
            f" {row.avg_aece_mean:>10.3f} ±{row.avg_aece_std:.3f}"
        )
    return "\n".join(lines) + "\n"


# --- command line ---------------------------------------------------------

EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
EXIT_NUMERIC_ERROR = 4


def _fail(exc: Exception, code: int) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Incremental-learning calibration experiments."""
    level = os.environ.get("TCIL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", type=click.Path(dir_okay=False), default=None,
              help="Metrics file (default: stdout).")
@click.option("--bins-out", type=click.Path(dir_okay=False), default=None,
              help="Also write per-bin statistics as CSV.")
def run(config_path, out, bins_out):
    """Run the experiment described by CONFIG_PATH."""
    try:
        with open(config_path, encoding="utf-8") as handle:
            config = parse_config(handle.read())
    except ConfigError as exc:
        _fail(exc, EXIT_CONFIG_ERROR)
    try:
        records = run_experiment(config)
    except ConfigError as exc:
        _fail(exc, EXIT_CONFIG_ERROR)
    except DataFormatError as exc:
        _fail(exc, EXIT_DATA_ERROR)
    except NumericError as exc:
        _fail(exc, EXIT_NUMERIC_ERROR)
    text = format_records(records)
    if out:
        with open(out, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        click.echo(text, nl=False)
    if bins_out:
        with open(bins_out, "w", encoding="utf-8") as handle:
            handle.write(format_bins_csv(records))


@main.command("summarize")
@click.argument("metrics_path", type=click.Path(exists=True, dir_okay=False))
def summarize_cmd(metrics_path):
    """Aggregate a metrics file into a per-calibrator table."""
    try:
        with open(metrics_path, encoding="utf-8") as handle:
            records = parse_records(handle.read())
        if not records:
            raise DataFormatError("metrics file holds no records")
    except DataFormatError as exc:
        _fail(exc, EXIT_DATA_ERROR)
    click.echo(format_summary(summarize(records)), nl=False)


@main.command("gen-synth")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_csv", type=click.Path(dir_okay=False))
def gen_synth(config_path, out_csv):
    """Write the config's synthetic stream as label,f1,...,fd CSV rows."""
    try:
        with open(config_path, encoding="utf-8") as handle:
            config = parse_config(handle.read())
    except ConfigError as exc:
        _fail(exc, EXIT_CONFIG_ERROR)
    stream = datagen.gen_gaussian_stream(config.stream)
    with open(out_csv, "w", encoding="utf-8") as handle:
        for task in stream.tasks:
            for sample in [*task.train, *task.valid, *task.test]:
                feats = ",".join(repr(float(v)) for v in sample.x)
                handle.write(f"{sample.y},{feats}\n")


if __name__ == "__main__":
    main()
