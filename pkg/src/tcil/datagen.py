"""Class-incremental task streams with per-task train/validation splits.

Two sources: a synthetic Gaussian-blob generator and a loader for small
header-free CSV files (``label,f1,...,fd``). Labels are 1-based and global
across tasks; each task owns a contiguous block of classes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError

Array = np.ndarray


@dataclass(frozen=True)
class Sample:
    x: Array
    y: int


@dataclass(frozen=True)
class StreamConfig:
    num_tasks: int = 5
    classes_per_task: int = 2
    input_dim: int = 8
    train_per_class: int = 200
    valid_per_class: int = 40
    test_per_class: int = 100
    blob_spread: float = 0.35
    seed: int = 0

    def __post_init__(self):
        counts = (
            self.num_tasks,
            self.classes_per_task,
            self.input_dim,
            self.train_per_class,
            self.valid_per_class,
            self.test_per_class,
        )
        if any(c < 1 for c in counts):
            raise ValueError("all stream counts must be >= 1")
        if self.blob_spread <= 0:
            raise ValueError("blob_spread must be positive")


@dataclass(frozen=True)
class TaskData:
    index: int
    classes: range
    train: list[Sample]
    valid: list[Sample]
    test: list[Sample]


@dataclass(frozen=True)
class TaskStream:
    tasks: list[TaskData]
    input_dim: int

    @property
    def num_classes(self) -> int:
        return self.tasks[-1].classes.stop - 1

    def valid_for_task(self, task_index: int) -> list[Sample]:
        """Validation split of one task only; calibration code must not see
        validation data from any other task."""
        return self.tasks[task_index - 1].valid

    def cumulative_test(self, task_index: int) -> list[Sample]:
        """Held-out samples of tasks 1..task_index concatenated."""
        out: list[Sample] = []
        for task in self.tasks[:task_index]:
            out.extend(task.test)
        return out

    def task_of_label(self, label: int) -> int:
        for task in self.tasks:
            if label in task.classes:
                return task.index
        raise ValueError(f"label {label} belongs to no task")


def stack_samples(samples) -> tuple[Array, Array]:
    xs = np.stack([s.x for s in samples])
    ys = np.array([s.y for s in samples], dtype=np.int64)
    return xs, ys


def gen_gaussian_stream(config: StreamConfig) -> TaskStream:
    """Synthetic stream: one isotropic Gaussian blob per class.

    Class means are drawn uniformly from [0,1]^d once per stream; samples
    are clipped to [0,1] coordinate-wise. Deterministic in ``config.seed``.
    """
    rng = np.random.default_rng(config.seed)
    num_classes = config.num_tasks * config.classes_per_task
    means = rng.uniform(0.0, 1.0, size=(num_classes, config.input_dim))

    per_class: dict[int, tuple[list[Sample], list[Sample], list[Sample]]] = {}
    sizes = (config.train_per_class, config.valid_per_class, config.test_per_class)
    for c in range(1, num_classes + 1):
        splits = []
        for size in sizes:
            points = rng.normal(means[c - 1], config.blob_spread, size=(size, config.input_dim))
            points = np.clip(points, 0.0, 1.0)
            splits.append([Sample(x=points[i], y=c) for i in range(size)])
        per_class[c] = tuple(splits)

    tasks = []
    for t in range(1, config.num_tasks + 1):
        classes = range((t - 1) * config.classes_per_task + 1, t * config.classes_per_task + 1)
        train, valid, test = [], [], []
        for c in classes:
            tr, va, te = per_class[c]
            train.extend(tr)
            valid.extend(va)
            test.extend(te)
        tasks.append(TaskData(index=t, classes=classes, train=train, valid=valid, test=test))
    return TaskStream(tasks=tasks, input_dim=config.input_dim)


def load_csv_stream(
    path,
    num_tasks: int,
    split_fractions: tuple[float, ...] = (0.8, 0.2),
    seed: int = 0,
) -> TaskStream:
    """Load ``label,f1,...,fd`` rows and partition classes into tasks.

    Labels must form a contiguous 1..K set with K divisible by
    ``num_tasks``. Rows of each class are shuffled with ``seed`` and split
    into train/valid(/test) by ``split_fractions``; with two fractions any
    remaining rows become the test split.
    """
    if num_tasks < 1:
        raise ValueError("num_tasks must be >= 1")
    if len(split_fractions) not in (2, 3):
        raise ValueError("split_fractions must have 2 or 3 entries")
    if any(f < 0 for f in split_fractions) or sum(split_fractions) > 1.0 + 1e-9:
        raise ValueError("split_fractions must be nonnegative and sum to <= 1")

    by_class: dict[int, list[Array]] = {}
    width = None
    with open(path, newline="", encoding="utf-8") as handle:
        for row_num, row in enumerate(csv.reader(handle), start=1):
            if not row:
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise DataFormatError(f"row {row_num}: expected label plus features")
            elif len(row) != width:
                raise DataFormatError(
                    f"row {row_num}: expected {width} fields, got {len(row)}"
                )
            try:
                label = int(row[0])
                feats = np.array([float(v) for v in row[1:]], dtype=np.float64)
            except ValueError as exc:
                raise DataFormatError(f"row {row_num}: {exc}") from exc
            by_class.setdefault(label, []).append(feats)
    if not by_class:
        raise DataFormatError("file contains no data rows")

    labels = sorted(by_class)
    num_classes = len(labels)
    if labels != list(range(1, num_classes + 1)):
        raise DataFormatError(
            f"labels must be contiguous 1..K, got {labels[:8]}{'...' if num_classes > 8 else ''}"
        )
    if num_classes % num_tasks != 0:
        raise DataFormatError(
            f"{num_classes} classes not divisible into {num_tasks} tasks"
        )

    rng = np.random.default_rng(seed)
    split_per_class: dict[int, tuple[list[Sample], list[Sample], list[Sample]]] = {}
    for c in labels:
        rows = by_class[c]
        order = rng.permutation(len(rows))
        n = len(rows)
        n_train = int(round(n * split_fractions[0]))
        n_valid = int(round(n * split_fractions[1]))
        n_valid = min(n_valid, n - n_train)
        shuffled = [Sample(x=rows[i], y=c) for i in order]
        split_per_class[c] = (
            shuffled[:n_train],
            shuffled[n_train : n_train + n_valid],
            shuffled[n_train + n_valid :],
        )

    per_task = num_classes // num_tasks
    tasks = []
    for t in range(1, num_tasks + 1):
        classes = range((t - 1) * per_task + 1, t * per_task + 1)
        train, valid, test = [], [], []
        for c in classes:
            tr, va, te = split_per_class[c]
            train.extend(tr)
            valid.extend(va)
            test.extend(te)
        tasks.append(TaskData(index=t, classes=classes, train=train, valid=valid, test=test))
    input_dim = width - 1
    return TaskStream(tasks=tasks, input_dim=input_dim)
