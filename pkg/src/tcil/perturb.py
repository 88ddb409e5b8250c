"""Exemplar perturbation and temperature selection without old-task data.

Memory exemplars are nearly perfectly fit by the model, so optimizing a
temperature on them directly collapses toward the lower bound. Instead the
exemplars are adversarially perturbed before fitting:

- direction: each exemplar is pushed toward a target class chosen by
  feature-space distance. New-task exemplars target their farthest class
  (hard misprediction), old-task exemplars their closest one (easy
  misprediction), which perturbs old tasks effectively harder at a shared
  magnitude.
- magnitude: a single epsilon is found by bisection so that the temperature
  fitted on perturbed new-task exemplars matches the temperature fitted on
  the new-task validation split.

The final temperature is fitted on the full perturbed exemplar set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import calib, nnet
from .cil import IncrementalState, Memory
from .datagen import Sample, stack_samples
from .errors import MissingClassError, SequencingError
from .nnet import MlpModel

logger = logging.getLogger(__name__)

Array = np.ndarray

POLICY_VARIANTS = ("tcil", "random_class", "closest_only", "farthest_only")


@dataclass(frozen=True)
class DirectionPolicy:
    """Target-class selection rule; ``seed`` only matters for random_class."""

    variant: str = "tcil"
    seed: int | None = None

    def __post_init__(self):
        if self.variant not in POLICY_VARIANTS:
            raise ValueError(
                f"unknown policy {self.variant!r}; expected one of {POLICY_VARIANTS}"
            )


@dataclass(frozen=True)
class MagSearchConfig:
    eps_low: float = 0.0
    eps_high: float = 1.0
    tolerance: float = 1e-3
    max_iters: int = 32

    def __post_init__(self):
        if not (0 <= self.eps_low < self.eps_high):
            raise ValueError("need 0 <= eps_low < eps_high")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class FeatureMeans:
    means: dict[int, Array]
    counts: dict[int, int]

    @property
    def classes(self) -> list[int]:
        return sorted(self.means)


def feature_means(model: MlpModel, memory: Memory) -> FeatureMeans:
    """Per-class mean of the feature extractor over memory exemplars."""
    if not memory.exemplars:
        raise ValueError("memory is empty")
    for c in range(1, model.num_classes + 1):
        if memory.count_for_class(c) == 0:
            raise MissingClassError(f"class {c} has no exemplars in memory")
    xs, ys = stack_samples(memory.exemplars)
    feats = nnet.forward_batch(model, xs).features
    means: dict[int, Array] = {}
    counts: dict[int, int] = {}
    for c in range(1, model.num_classes + 1):
        mask = ys == c
        means[c] = feats[mask].mean(axis=0)
        counts[c] = int(mask.sum())
    return FeatureMeans(means=means, counts=counts)


def _distance_matrix(features: Array, means: FeatureMeans) -> tuple[Array, list[int]]:
    classes = means.classes
    mu = np.stack([means.means[c] for c in classes])
    diff = features[:, None, :] - mu[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2)), classes


def select_targets_from_features(
    features: Array,
    labels: Array,
    means: FeatureMeans,
    policy: DirectionPolicy,
    new_task_classes,
    rng: np.random.Generator | None = None,
) -> Array:
    """Vectorized target choice for rows of ``features``; ties and the
    random policy resolve toward the lowest class index / the given rng."""
    classes = means.classes
    if len(classes) < 2:
        raise ValueError("need at least 2 classes to pick a target")
    labels = np.asarray(labels, dtype=np.int64)
    new_set = set(new_task_classes)

    if policy.variant == "random_class":
        if rng is None:
            rng = np.random.default_rng(policy.seed)
        targets = []
        for y in labels:
            others = [c for c in classes if c != y]
            targets.append(others[rng.integers(len(others))])
        return np.array(targets, dtype=np.int64)

    dist, classes = _distance_matrix(np.asarray(features, dtype=np.float64), means)
    class_arr = np.array(classes)
    self_mask = class_arr[None, :] == labels[:, None]
    targets = np.empty(len(labels), dtype=np.int64)
    for i, y in enumerate(labels):
        if policy.variant == "closest_only":
            want_far = False
        elif policy.variant == "farthest_only":
            want_far = True
        else:  # tcil: farthest for new-task exemplars, closest for old
            want_far = int(y) in new_set
        row = dist[i].copy()
        row[self_mask[i]] = -np.inf if want_far else np.inf
        # argmax/argmin take the first (lowest-class) entry on ties
        targets[i] = class_arr[int(np.argmax(row) if want_far else np.argmin(row))]
    return targets


def select_target(
    model: MlpModel,
    x: Array,
    y: int,
    means: FeatureMeans,
    policy: DirectionPolicy,
    new_task_classes,
    rng: np.random.Generator | None = None,
) -> int:
    """Target class for one exemplar under the given direction policy."""
    if y not in means.means:
        raise ValueError(f"label {y} has no feature mean")
    feats = nnet.forward(model, x).features
    targets = select_targets_from_features(
        feats[None, :], np.array([y]), means, policy, new_task_classes, rng
    )
    return int(targets[0])


def fgsm_targeted(model: MlpModel, x: Array, y_target: int, eps: float, clip: bool = True) -> Array:
    """One-step targeted perturbation: ``x - eps * sign(d CE(x, y_target)/dx)``.

    Stepping against the gradient decreases the loss toward the target
    class. ``sign(0) == 0``; with ``clip`` the result is clamped to [0, 1].
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    grad = nnet.input_gradient(model, x, y_target)
    adv = x - eps * np.sign(grad)
    return np.clip(adv, 0.0, 1.0) if clip else adv


@dataclass(frozen=True)
class MagSearchResult:
    eps_adv: float
    iterations: int
    target_unreachable: bool


def mag_search(
    model: MlpModel,
    new_task_exemplars,
    t_target: float,
    means: FeatureMeans,
    cfg: MagSearchConfig,
    clip: bool = True,
    temperature_bounds: tuple[float, float] = calib.DEFAULT_TEMPERATURE_BOUNDS,
) -> MagSearchResult:
    """Bisection for the magnitude whose perturbed-exemplar temperature
    matches ``t_target``.

    Every new-task exemplar is pushed toward its farthest class in feature
    space; larger magnitudes cause more mispredictions and hence larger
    fitted temperatures, so the bracket midpoint moves up while the fitted
    temperature is below target and down otherwise. When even the top of
    the bracket cannot reach the target, the top is returned and flagged.
    """
    exemplars = list(new_task_exemplars)
    if not exemplars:
        raise ValueError("new-task exemplar set is empty")
    xs, ys = stack_samples(exemplars)
    feats = nnet.forward_batch(model, xs).features
    # Target classes and gradient signs depend only on the unperturbed
    # exemplars, so they are fixed across bisection iterations.
    targets = select_targets_from_features(
        feats, ys, means, DirectionPolicy("farthest_only"), new_task_classes=()
    )
    signs = np.sign(nnet.input_gradients(model, xs, targets))

    lo, hi = cfg.eps_low, cfg.eps_high
    iterations = 0
    hi_moved = False
    while hi - lo > cfg.tolerance and iterations < cfg.max_iters:
        eps = (lo + hi) / 2.0
        adv = xs - eps * signs
        if clip:
            adv = np.clip(adv, 0.0, 1.0)
        logits = nnet.forward_batch(model, adv).logits
        t_adv = calib.temp_opt(list(zip(logits, ys.tolist())), temperature_bounds)
        if t_adv < t_target:
            lo = eps
        else:
            hi = eps
            hi_moved = True
        iterations += 1
    if not hi_moved:
        logger.debug("magnitude search: target temperature %.4f unreachable", t_target)
        return MagSearchResult(eps_adv=hi, iterations=iterations, target_unreachable=True)
    return MagSearchResult(
        eps_adv=(lo + hi) / 2.0, iterations=iterations, target_unreachable=False
    )


@dataclass(frozen=True)
class PerturbedItem:
    x_adv: Array
    y: int
    y_target: int
    source_task: int


@dataclass(frozen=True)
class PerturbedSet:
    items: list[PerturbedItem]
    eps: float
    task_index: int

    def group(self, which: str) -> list[PerturbedItem]:
        if which == "new":
            return [it for it in self.items if it.source_task == self.task_index]
        if which == "old":
            return [it for it in self.items if it.source_task < self.task_index]
        raise ValueError(f"unknown group {which!r}; expected 'old' or 'new'")


def perturb_memory(
    model: MlpModel,
    memory: Memory,
    means: FeatureMeans,
    eps: float,
    policy: DirectionPolicy,
    new_task_classes,
    task_of,
    task_index: int,
    clip: bool = True,
    rng: np.random.Generator | None = None,
) -> PerturbedSet:
    """Perturb every memory exemplar at magnitude ``eps`` with targets
    chosen by ``policy``."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    xs, ys = stack_samples(memory.exemplars)
    feats = nnet.forward_batch(model, xs).features
    targets = select_targets_from_features(feats, ys, means, policy, new_task_classes, rng)
    signs = np.sign(nnet.input_gradients(model, xs, targets))
    adv = xs - eps * signs
    if clip:
        adv = np.clip(adv, 0.0, 1.0)
    items = [
        PerturbedItem(
            x_adv=adv[i],
            y=int(ys[i]),
            y_target=int(targets[i]),
            source_task=task_of(int(ys[i])),
        )
        for i in range(len(ys))
    ]
    return PerturbedSet(items=items, eps=eps, task_index=task_index)


def misprediction_rate(model: MlpModel, perturbed: PerturbedSet, group: str) -> float:
    """Fraction of a perturbed group whose prediction left the original class."""
    items = perturbed.group(group)
    if not items:
        raise ValueError(f"group {group!r} is empty")
    xs = np.stack([it.x_adv for it in items])
    ys = np.array([it.y for it in items])
    preds = nnet.forward_batch(model, xs).logits.argmax(axis=1) + 1
    return float((preds != ys).mean())


@dataclass(frozen=True)
class TcilReport:
    t_target: float
    t_adv: float
    eps_adv: float
    search_iterations: int
    target_unreachable: bool
    mispredict_by_task: dict[int, float]
    mispredict_old: float | None
    mispredict_new: float
    perturbed: PerturbedSet


def tcil_temperature(
    state: IncrementalState,
    valid,
    policy: DirectionPolicy = DirectionPolicy("tcil"),
    cfg: MagSearchConfig = MagSearchConfig(),
    clip: bool = True,
    temperature_bounds: tuple[float, float] = calib.DEFAULT_TEMPERATURE_BOUNDS,
) -> tuple[float, TcilReport]:
    """End-to-end temperature selection after training task ``t``.

    Reads only the new task's validation split and the (already updated)
    memory. Steps: fit the target temperature on the validation split,
    compute feature means over memory, bisect the magnitude on new-task
    exemplars, perturb all exemplars with the direction policy, and fit the
    returned temperature on that perturbed set.
    """
    model = state.model
    if model is None:
        raise SequencingError("no trained model in state")
    memory = state.memory
    if not memory.exemplars:
        raise SequencingError("memory is empty; update it after training")
    valid = list(valid)
    if not valid:
        raise ValueError("validation set is empty")
    new_classes = state.new_classes
    new_exemplars = [s for s in memory.exemplars if s.y in new_classes]
    if not new_exemplars:
        raise SequencingError(
            "memory holds no new-task exemplars; was update_memory skipped?"
        )

    xv, yv = stack_samples(valid)
    valid_logits = nnet.forward_batch(model, xv).logits
    t_target = calib.temp_opt(list(zip(valid_logits, yv.tolist())), temperature_bounds)

    means = feature_means(model, memory)
    search = mag_search(model, new_exemplars, t_target, means, cfg, clip, temperature_bounds)

    rng = np.random.default_rng(policy.seed) if policy.variant == "random_class" else None
    perturbed = perturb_memory(
        model,
        memory,
        means,
        search.eps_adv,
        policy,
        new_classes,
        state.task_of_label,
        state.task_index,
        clip,
        rng,
    )

    adv_x = np.stack([it.x_adv for it in perturbed.items])
    adv_y = np.array([it.y for it in perturbed.items])
    adv_logits = nnet.forward_batch(model, adv_x).logits
    t_adv = calib.temp_opt(list(zip(adv_logits, adv_y.tolist())), temperature_bounds)

    preds = adv_logits.argmax(axis=1) + 1
    missed = preds != adv_y
    by_task: dict[int, float] = {}
    tasks = np.array([it.source_task for it in perturbed.items])
    for t in sorted(set(tasks.tolist())):
        mask = tasks == t
        by_task[t] = float(missed[mask].mean())
    old_mask = tasks < state.task_index
    report = TcilReport(
        t_target=t_target,
        t_adv=t_adv,
        eps_adv=search.eps_adv,
        search_iterations=search.iterations,
        target_unreachable=search.target_unreachable,
        mispredict_by_task=by_task,
        mispredict_old=float(missed[old_mask].mean()) if old_mask.any() else None,
        mispredict_new=float(missed[~old_mask].mean()),
        perturbed=perturbed,
    )
    logger.debug(
        "task %d: t_target=%.3f eps=%.4f t_adv=%.3f",
        state.task_index, t_target, search.eps_adv, t_adv,
    )
    return t_adv, report
