"""Experience-replay incremental training and the bounded exemplar memory.

Each task trains on the union of the new task's training split and the
current memory. The memory keeps a class-balanced uniform sample of
everything seen so far; it is updated only after training, so exemplars of
the new task join it once the task is done.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import nnet
from .datagen import Sample, TaskData, stack_samples
from .errors import NumericError, StreamError
from .nnet import MlpModel

logger = logging.getLogger(__name__)

Array = np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 2e-4
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class Memory:
    """Capacity-bounded exemplar store, class-balanced within one sample."""

    capacity: int
    exemplars: list[Sample]
    per_class_index: dict[int, list[int]]

    @classmethod
    def empty(cls, capacity: int) -> "Memory":
        if capacity < 1:
            raise ValueError("memory capacity must be >= 1")
        return cls(capacity=capacity, exemplars=[], per_class_index={})

    @property
    def classes(self) -> list[int]:
        return sorted(self.per_class_index)

    def count_for_class(self, label: int) -> int:
        return len(self.per_class_index.get(label, ()))

    def samples_for_class(self, label: int) -> list[Sample]:
        return [self.exemplars[i] for i in self.per_class_index.get(label, ())]


def _quotas(capacity: int, classes: list[int]) -> dict[int, int]:
    # floor(M/K) each; the M mod K leftovers go to the lowest class indices.
    base, rem = divmod(capacity, len(classes))
    return {c: base + (1 if rank < rem else 0) for rank, c in enumerate(sorted(classes))}


def update_memory(memory: Memory, new_train, new_classes, seed: int = 0) -> Memory:
    """Rebalance memory over all seen classes plus ``new_classes``.

    Every class gets an equal quota (leftover slots go to the lowest class
    indices). Surviving old exemplars are chosen uniformly at random, new
    ones are drawn uniformly from ``new_train``. Classes with fewer samples
    than their quota keep everything they have.
    """
    new_classes = list(new_classes)
    bad = [s.y for s in new_train if s.y not in new_classes]
    if bad:
        raise ValueError(f"new_train contains label {bad[0]} outside new_classes")

    all_classes = sorted(set(memory.per_class_index) | set(new_classes))
    if not all_classes:
        raise ValueError("nothing to store: no classes present")
    quotas = _quotas(memory.capacity, all_classes)

    new_by_class: dict[int, list[Sample]] = {c: [] for c in new_classes}
    for s in new_train:
        new_by_class[s.y].append(s)

    rng = np.random.default_rng(seed)
    exemplars: list[Sample] = []
    index: dict[int, list[int]] = {}
    for c in all_classes:
        pool = new_by_class[c] if c in new_by_class else memory.samples_for_class(c)
        keep = min(quotas[c], len(pool))
        if keep < len(pool):
            chosen = np.sort(rng.choice(len(pool), size=keep, replace=False))
            picked = [pool[i] for i in chosen]
        else:
            picked = list(pool)
        index[c] = list(range(len(exemplars), len(exemplars) + len(picked)))
        exemplars.extend(picked)
    return Memory(capacity=memory.capacity, exemplars=exemplars, per_class_index=index)


@dataclass(frozen=True)
class IncrementalState:
    """Model + memory after some number of tasks."""

    model: MlpModel | None
    memory: Memory
    task_index: int = 0
    classes_seen: int = 0
    task_classes: list[range] = field(default_factory=list)
    feature_dims: tuple[int, ...] = nnet.DEFAULT_FEATURE_DIMS

    @classmethod
    def fresh(
        cls, memory_capacity: int, feature_dims: tuple[int, ...] = nnet.DEFAULT_FEATURE_DIMS
    ) -> "IncrementalState":
        return cls(model=None, memory=Memory.empty(memory_capacity), feature_dims=feature_dims)

    @property
    def new_classes(self) -> range:
        if not self.task_classes:
            raise ValueError("no task trained yet")
        return self.task_classes[-1]

    def task_of_label(self, label: int) -> int:
        for t, classes in enumerate(self.task_classes, start=1):
            if label in classes:
                return t
        raise ValueError(f"label {label} not seen yet")


class _Sgd:
    def __init__(self, params: list[Array], lr: float, weight_decay: float):
        self.lr = lr
        self.wd = weight_decay

    def step(self, params: list[Array], grads: list[Array]) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * (g + self.wd * p)


class _Adam:
    def __init__(self, params: list[Array], lr: float, weight_decay: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.wd = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[Array], grads: list[Array]) -> None:
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            g = g + self.wd * p
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1 - self.beta2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _make_optimizer(cfg: TrainConfig, params: list[Array]):
    if cfg.optimizer == "adam":
        return _Adam(params, cfg.learning_rate, cfg.weight_decay)
    return _Sgd(params, cfg.learning_rate, cfg.weight_decay)


def train_task(state: IncrementalState, task: TaskData, cfg: TrainConfig) -> IncrementalState:
    """Train one incremental task with experience replay.

    The head is widened by the task's class count (created from scratch on
    the first task), then fit by minibatch cross-entropy on the new train
    split plus the current memory. The memory itself is left untouched;
    update it separately once training is done.
    """
    expected_start = state.classes_seen + 1
    if task.classes.start != expected_start:
        raise StreamError(
            f"task classes start at {task.classes.start}, expected {expected_start}"
        )
    num_new = len(task.classes)
    if state.model is None:
        model = MlpModel.create(
            input_dim=task.train[0].x.shape[0],
            num_classes=num_new,
            feature_dims=state.feature_dims,
            seed=cfg.seed,
        )
    else:
        model = nnet.widen_head(state.model, num_new)

    train_pool = list(task.train) + list(state.memory.exemplars)
    xs, ys = stack_samples(train_pool)
    n = len(train_pool)
    rng = np.random.default_rng(cfg.seed)
    params = model.params()
    optimizer = _make_optimizer(cfg, params)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            grads = nnet.param_gradients_arrays(model, xs[idx], ys[idx])
            optimizer.step(params, grads.as_list())
        if not model.params_finite():
            raise NumericError(f"non-finite parameters after epoch {epoch + 1}")
    logger.debug("task %d trained on %d samples (%d from memory)",
                 task.index, n, len(state.memory.exemplars))

    return replace(
        state,
        model=model,
        task_index=task.index,
        classes_seen=state.classes_seen + num_new,
        task_classes=state.task_classes + [task.classes],
    )


def evaluate(model: MlpModel, samples, temperature: float = 1.0, task_of=None):
    """Top-1 accuracy, overall and (given a label->task map) per task."""
    samples = list(samples)
    if not samples:
        raise ValueError("samples must be nonempty")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    xs, ys = stack_samples(samples)
    logits = nnet.forward_batch(model, xs).logits
    # Temperature rescales logits monotonically; argmax (accuracy) is unaffected.
    preds = logits.argmax(axis=1) + 1
    correct = preds == ys
    accuracy = float(correct.mean())
    per_task: dict[int, float] = {}
    if task_of is not None:
        tasks = np.array([task_of(int(y)) for y in ys])
        for t in sorted(set(tasks.tolist())):
            mask = tasks == t
            per_task[t] = float(correct[mask].mean())
    return accuracy, per_task
