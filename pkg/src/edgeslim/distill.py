"""Two-teacher distillation with early halting.

A derived student trains under two guides: a trainee (an untrained copy of
the teacher architecture, learning alongside and sharing its leading layers
with the student) and a pretrained teacher.  Per batch the student minimises

    epoch <= h:  l1*CE_s + l2*AL + l3*DL + l4*CE_te
    epoch  > h:  l1*CE_s + l2*AL + l3*DL

where CE_s / CE_te are the student's and trainee's cross-entropies, AL the
normalized attention-map loss, DL the squared-logit distillation loss, and h
the halting epoch after which the trainee is frozen and guidance comes from
the pretrained teacher alone.  While live, the trainee supplies the DL
targets and learns only from its own CE term; the pretrained teacher
supplies AL targets whenever present.  The l-weights on the simplex are
tuned by differential evolution against validation accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from edgeslim.archspec import CONV_KINDS, NetworkSpec
from edgeslim.datasets import Dataset, train_test_split
from edgeslim.engine import autodiff as ad
from edgeslim.engine.autodiff import Tensor
from edgeslim.engine.model import (
    ForwardTrace,
    MaskedModel,
    TrainingDiverged,
    cross_entropy_node,
    forward,
    model_bytes,
)
from edgeslim.engine.training import epoch_seed, iterate_minibatches, predict
from edgeslim.metrics import accuracy as metric_accuracy
from edgeslim.metrics import confusion_counts
from edgeslim.resources import estimate_layer

NORM_FLOOR = 1e-6  # attention rows with a norm below this count as dead


class SchemeTraits(NamedTuple):
    trainee: bool  # a live trainee co-trains
    pretrained: bool  # a pretrained teacher guides
    shared: bool  # student and trainee alias their leading layers
    halts: bool  # trainee freezes at the halting epoch


# Ablation ladder: S1 pretrained-teacher-only distillation of a fresh
# student; S2/S3 trainee-only co-training (S3 adds sharing); S4/S5 both
# teachers (S5 adds sharing); S6 = S5 plus early halting.
SCHEMES = {
    "S1": SchemeTraits(trainee=False, pretrained=True, shared=False, halts=False),
    "S2": SchemeTraits(trainee=True, pretrained=False, shared=False, halts=False),
    "S3": SchemeTraits(trainee=True, pretrained=False, shared=True, halts=False),
    "S4": SchemeTraits(trainee=True, pretrained=True, shared=False, halts=False),
    "S5": SchemeTraits(trainee=True, pretrained=True, shared=True, halts=False),
    "S6": SchemeTraits(trainee=True, pretrained=True, shared=True, halts=True),
}


@dataclass(frozen=True)
class DistillPlan:
    """Loss weights, halting policy, and training knobs for one run.

    ``lambda1..3`` live strictly inside the simplex (sum 1 to 1e-9);
    ``lambda4`` is pinned at 1.  ``halting_epoch`` may be fixed up front or
    left None for plateau detection (halting schemes only).  ``plateau_*``
    read validation accuracy in percentage points.
    """

    lambda1: float
    lambda2: float
    lambda3: float
    lambda4: float = 1.0
    halting_epoch: int | None = None
    total_epochs: int = 30
    scheme: str = "S6"
    shared_prefix: int | None = None
    raw_logit_matching: bool = True
    eta: float = 0.05
    batch_size: int = 32
    seed: int = 0
    val_fraction: float = 0.3
    plateau_epsilon: float = 0.5
    plateau_window: int = 10
    h_max: int | None = None
    attention_seed: int = 0

    def __post_init__(self) -> None:
        lams = (self.lambda1, self.lambda2, self.lambda3)
        if abs(sum(lams) - 1.0) > 1e-9:
            raise ValueError(f"lambda1+lambda2+lambda3 must equal 1, got {sum(lams)!r}")
        if not all(0.0 < l < 1.0 for l in lams):
            raise ValueError(f"each lambda must lie strictly in (0, 1), got {lams}")
        if self.lambda4 != 1.0:
            raise ValueError("lambda4 is fixed at 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {sorted(SCHEMES)}")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be positive")
        if self.halting_epoch is not None and not 0 <= self.halting_epoch < self.total_epochs:
            raise ValueError("halting_epoch must satisfy 0 <= h < total_epochs")
        if self.h_max is not None and self.h_max >= self.total_epochs:
            raise ValueError("h_max must stay below total_epochs")
        if not self.raw_logit_matching:
            raise ValueError("only raw (temperature-free) logit matching is supported")

    def effective_lambdas(self) -> tuple[float, float, float, float]:
        """Per-scheme loss weights.

        Without a trainee there is no attention source being co-trained and
        no trainee CE, so those weights drop and the survivors renormalise
        to sum 1.
        """
        traits = SCHEMES[self.scheme]
        if traits.trainee:
            return (self.lambda1, self.lambda2, self.lambda3, self.lambda4)
        total = self.lambda1 + self.lambda3
        return (self.lambda1 / total, 0.0, self.lambda3 / total, 0.0)


@dataclass(frozen=True)
class LossBreakdown:
    ce_student: float
    ce_trainee: float
    attention: float
    distillation: float
    combined: float
    epoch: int
    branch: str  # "pre_halt" | "post_halt"

    def to_dict(self) -> dict:
        return {
            "ce_student": self.ce_student,
            "ce_trainee": self.ce_trainee,
            "attention": self.attention,
            "distillation": self.distillation,
            "combined": self.combined,
            "epoch": self.epoch,
            "branch": self.branch,
        }


def combined_loss(
    ce_student: float,
    ce_trainee: float,
    attention: float,
    distillation: float,
    plan: DistillPlan,
    epoch: int,
    halted: bool | None = None,
) -> LossBreakdown:
    """Assemble one breakdown row; the branch decides whether CE_te counts.

    ``halted`` overrides the plan's fixed halting epoch (the trainer passes
    its live flag); otherwise epochs past ``plan.halting_epoch`` take the
    post-halt branch, as does any scheme without a trainee.
    """
    traits = SCHEMES[plan.scheme]
    if halted is None:
        halted = (
            traits.halts
            and plan.halting_epoch is not None
            and epoch > plan.halting_epoch
        )
    post = halted or not traits.trainee
    l1, l2, l3, l4 = plan.effective_lambdas()
    combined = l1 * ce_student + l2 * attention + l3 * distillation
    if not post:
        combined += l4 * ce_trainee
    return LossBreakdown(
        ce_student=ce_student,
        ce_trainee=ce_trainee,
        attention=attention,
        distillation=distillation,
        combined=combined,
        epoch=epoch,
        branch="post_halt" if post else "pre_halt",
    )


# -- loss components --------------------------------------------------------


def distillation_loss_node(teacher_logits: Tensor, student_logits: Tensor) -> Tensor:
    """Mean over the batch of the squared L2 logit distance."""
    if teacher_logits.data.shape != student_logits.data.shape:
        raise ValueError(
            f"logit shapes differ: {teacher_logits.data.shape} vs {student_logits.data.shape}"
        )
    diff = teacher_logits - student_logits
    return (diff * diff).sum(axis=1).mean()


def distillation_loss(teacher_logits: np.ndarray, student_logits: np.ndarray) -> float:
    return float(distillation_loss_node(ad.lift(teacher_logits), ad.lift(student_logits)).data)


def _normalize_rows(maps: Tensor) -> Tensor:
    # Rows whose norm falls below the floor (dead ReLU rows, mostly) have no
    # defined direction; they are detached outright -- value zero, zero
    # gradient -- rather than divided by the floor, which would turn a dead
    # row into a 1/NORM_FLOOR gradient kick.
    sumsq_data = (maps.data.astype(np.float64) ** 2).sum(axis=1, keepdims=True)
    alive = ad.lift((sumsq_data >= NORM_FLOOR**2).astype(maps.data.dtype))
    masked = maps * alive
    sumsq = ad.clip_min((masked * masked).sum(axis=1, keepdims=True), NORM_FLOOR**2)
    return masked / ad.sqrt(sumsq)


def attention_loss_node(
    teacher_maps: Sequence[Tensor], student_maps: Sequence[Tensor]
) -> Tensor:
    """Sum over layers of the mean squared distance of row-normalized maps.

    Normalization makes the loss scale-invariant in either map; zero maps
    fall back to a norm floor instead of dividing by zero.
    """
    if len(teacher_maps) != len(student_maps):
        raise ValueError(
            f"map counts differ: {len(teacher_maps)} vs {len(student_maps)}"
        )
    total = None
    for t, s in zip(teacher_maps, student_maps):
        if t.data.shape != s.data.shape:
            raise ValueError(f"map shapes differ: {t.data.shape} vs {s.data.shape}")
        diff = _normalize_rows(t) - _normalize_rows(s)
        term = (diff * diff).sum(axis=1).mean()
        total = term if total is None else total + term
    if total is None:
        return ad.lift(np.float64(0.0))
    return total


def attention_loss(teacher_maps, student_maps) -> float:
    """Float surface over plain arrays; a single map pair may be passed bare."""
    if isinstance(teacher_maps, np.ndarray):
        teacher_maps = [teacher_maps]
    if isinstance(student_maps, np.ndarray):
        student_maps = [student_maps]
    t = [ad.lift(np.atleast_2d(np.asarray(m, dtype=np.float64))) for m in teacher_maps]
    s = [ad.lift(np.atleast_2d(np.asarray(m, dtype=np.float64))) for m in student_maps]
    return float(attention_loss_node(t, s).data)


def _projection(seed: int, layer_idx: int, width_from: int, width_to: int) -> np.ndarray:
    rng = np.random.default_rng([seed, layer_idx, width_from, width_to])
    return rng.normal(size=(width_from, width_to)) / np.sqrt(width_from)


def build_attention_maps(
    trace: ForwardTrace, spec: NetworkSpec
) -> list[Tensor]:
    """Per-layer summaries for every layer except the logits layer.

    Conv outputs collapse to per-channel spatial means; dense and recurrent
    outputs pass through.  Shapes: (batch, width) per layer.
    """
    maps = []
    for layer, act in zip(spec.layers[:-1], trace.activations[:-1]):
        if layer.kind in CONV_KINDS:
            maps.append(act.mean(axis=(2, 3)))
        else:
            maps.append(act)
    return maps


def align_map_pair(
    t_map: Tensor, s_map: Tensor, layer_idx: int, seed: int
) -> tuple[Tensor, Tensor]:
    """Project the wider map down when teacher/student widths differ."""
    wt, ws = t_map.data.shape[1], s_map.data.shape[1]
    if wt == ws:
        return t_map, s_map
    if wt > ws:
        proj = ad.lift(_projection(seed, layer_idx, wt, ws).astype(t_map.data.dtype))
        return t_map @ proj, s_map
    proj = ad.lift(_projection(seed, layer_idx, ws, wt).astype(s_map.data.dtype))
    return t_map, s_map @ proj


# -- training loop ----------------------------------------------------------


@dataclass(frozen=True)
class EpochRecord:
    breakdown: LossBreakdown
    val_accuracy: float  # class-averaged, fraction in [0, 1]
    cumulative_flops: int

    def to_dict(self) -> dict:
        out = self.breakdown.to_dict()
        out["val_accuracy"] = self.val_accuracy
        out["cumulative_flops"] = self.cumulative_flops
        return out


@dataclass
class TrainResult:
    student: MaskedModel
    trainee: MaskedModel | None
    history: list[EpochRecord]
    halting_epoch: int | None
    effective_lambdas: tuple[float, float, float, float]
    trainee_bytes_at_halt: bytes | None

    @property
    def total_flops(self) -> int:
        return self.history[-1].cumulative_flops if self.history else 0

    @property
    def final_accuracy(self) -> float:
        return self.history[-1].val_accuracy if self.history else 0.0


def network_flops(spec: NetworkSpec) -> int:
    return sum(estimate_layer(layer).flops for layer in spec.layers)


def share_prefix_layers(student: MaskedModel, trainee: MaskedModel, prefix: int) -> None:
    """Alias the first ``prefix`` layers: the student reuses the trainee's
    arrays, so one update moves both until the halt severs them."""
    for idx in range(prefix):
        if student.spec.layers[idx] != trainee.spec.layers[idx]:
            raise ValueError(f"layer {idx} is not structurally shared")
        student.layers[idx] = trainee.layers[idx]


def _shares_prefix(student: MaskedModel, trainee: MaskedModel, prefix: int) -> bool:
    return all(
        student.layers[i].params[name] is trainee.layers[i].params[name]
        for i in range(prefix)
        for name in student.layers[i].params
    )


def _sever_shared(student: MaskedModel, prefix: int) -> None:
    """Give the student private copies of the shared arrays (at halt)."""
    from edgeslim.engine.model import LayerParams

    for idx in range(prefix):
        lp = student.layers[idx]
        student.layers[idx] = LayerParams(
            params={k: v.copy() for k, v in lp.params.items()},
            masks={k: v.copy() for k, v in lp.masks.items()},
        )


def _apply_updates(traces: list[ForwardTrace], eta: float) -> None:
    """One SGD step over the union of leaves; shared arrays move once."""
    seen: set[int] = set()
    for trace in traces:
        for layer_leaves in trace.leaves:
            for name, leaf in layer_leaves.items():
                if not leaf.requires_grad or id(leaf) in seen:
                    continue
                seen.add(id(leaf))
                if leaf.grad is None:
                    continue
                if not np.all(np.isfinite(leaf.grad)):
                    raise TrainingDiverged(f"non-finite gradient for parameter {name!r}")
                leaf.data -= eta * leaf.grad.astype(leaf.data.dtype, copy=False)


def _detached_maps(trace: ForwardTrace, spec: NetworkSpec) -> list[Tensor]:
    return [ad.lift(m.data) for m in build_attention_maps(trace, spec)]


def _val_accuracy(model: MaskedModel, val: Dataset) -> float:
    counts = confusion_counts(val.labels, predict(model, val.features), val.k)
    return metric_accuracy(counts)


def train(
    student: MaskedModel,
    trainee: MaskedModel | None,
    pretrained_teacher: MaskedModel | None,
    dataset: Dataset,
    plan: DistillPlan,
) -> TrainResult:
    """Run one scheme to completion; history carries one record per epoch.

    The dataset splits 70/30 (by ``plan.val_fraction`` and seed) into the
    training and validation folds.  Guidance targets are always detached:
    the trainee learns from its own CE only, and gradients reach shared
    layers through both the student's and the trainee's paths while they
    remain aliased.  On divergence a ``TrainingDiverged`` is raised with the
    partial history attached as ``exc.history``.
    """
    traits = SCHEMES[plan.scheme]
    if traits.trainee and trainee is None:
        raise ValueError(f"scheme {plan.scheme} needs a trainee model")
    if not traits.trainee and trainee is not None:
        raise ValueError(f"scheme {plan.scheme} does not take a trainee")
    if traits.pretrained and pretrained_teacher is None:
        raise ValueError(f"scheme {plan.scheme} needs a pretrained teacher")
    if not traits.pretrained and pretrained_teacher is not None:
        raise ValueError(f"scheme {plan.scheme} does not take a pretrained teacher")
    if trainee is not None and pretrained_teacher is not None:
        if trainee.spec.layers != pretrained_teacher.spec.layers:
            raise ValueError("trainee and pretrained teacher must share one architecture")
    prefix = plan.shared_prefix if plan.shared_prefix is not None else student.spec.shared_prefix
    if traits.shared:
        if not _shares_prefix(student, trainee, prefix):
            raise ValueError(
                "scheme shares the leading layers; call share_prefix_layers first"
            )

    train_set, val_set = train_test_split(dataset, plan.val_fraction, plan.seed)
    l1, l2, l3, l4 = plan.effective_lambdas()
    f_student = network_flops(student.spec)
    f_trainee = network_flops(trainee.spec) if trainee is not None else 0
    f_teacher = network_flops(pretrained_teacher.spec) if pretrained_teacher is not None else 0

    history: list[EpochRecord] = []
    cumulative = 0
    halted = not traits.trainee  # trainee-less schemes live on the post-halt branch
    halting_epoch: int | None = None
    trainee_bytes: bytes | None = None
    h_cap = plan.h_max if plan.h_max is not None else plan.total_epochs - 1

    def halt_now(epoch: int) -> None:
        nonlocal halted, halting_epoch, trainee_bytes
        halted = True
        halting_epoch = epoch
        trainee_bytes = model_bytes(trainee)
        if traits.shared:
            _sever_shared(student, prefix)

    if traits.halts:
        fixed_h = plan.halting_epoch if plan.halting_epoch is not None else None
        if (fixed_h == 0) or (fixed_h is None and h_cap == 0):
            halt_now(0)

    acc_pct: list[float] = []
    for epoch in range(1, plan.total_epochs + 1):
        rng = np.random.default_rng(epoch_seed(plan.seed, epoch))
        sums = np.zeros(4)  # ce_s, ce_te, al, dl weighted by batch size
        seen_rows = 0
        for idx in iterate_minibatches(train_set.n, plan.batch_size, rng):
            x, y = train_set.features[idx], train_set.labels[idx]
            cache: dict[int, Tensor] | None = {} if (traits.shared and not halted) else None
            s_trace = forward(student, x, trainable=True, leaf_cache=cache)
            ce_s = cross_entropy_node(s_trace, y)
            traces = [s_trace]

            ce_te_val = 0.0
            loss = l1 * ce_s
            if not halted:
                te_trace = forward(trainee, x, trainable=True, leaf_cache=cache)
                ce_te = cross_entropy_node(te_trace, y)
                ce_te_val = float(ce_te.data)
                loss = loss + l4 * ce_te
                traces.append(te_trace)
                dl_source = ad.lift(te_trace.logits.data)
            if pretrained_teacher is not None:
                g_trace = forward(pretrained_teacher, x, trainable=False)
                if halted:
                    dl_source = g_trace.logits
                al_source_trace, al_source_spec = g_trace, pretrained_teacher.spec
            else:
                al_source_trace, al_source_spec = te_trace, trainee.spec

            dl = distillation_loss_node(dl_source, s_trace.logits)
            al_val = 0.0
            if l2 > 0.0:
                t_maps = _detached_maps(al_source_trace, al_source_spec)
                s_maps = build_attention_maps(s_trace, student.spec)
                pairs = [
                    align_map_pair(t, s, i, plan.attention_seed)
                    for i, (t, s) in enumerate(zip(t_maps, s_maps))
                ]
                al = attention_loss_node([p[0] for p in pairs], [p[1] for p in pairs])
                al_val = float(al.data)
                loss = loss + l2 * al
            loss = loss + l3 * dl

            if not np.isfinite(float(loss.data)):
                exc = TrainingDiverged(f"combined loss diverged at epoch {epoch}")
                exc.history = history
                raise exc
            loss.backward()
            try:
                _apply_updates(traces, plan.eta)
            except TrainingDiverged as exc:
                exc.history = history
                raise
            n = len(idx)
            sums += n * np.array([float(ce_s.data), ce_te_val, al_val, float(dl.data)])
            seen_rows += n

        ce_s_m, ce_te_m, al_m, dl_m = (sums / seen_rows).tolist()
        breakdown = combined_loss(ce_s_m, ce_te_m, al_m, dl_m, plan, epoch, halted=halted)
        per_instance = 3 * f_student
        if not halted:
            per_instance += 3 * f_trainee
        if pretrained_teacher is not None:
            per_instance += f_teacher
        cumulative += per_instance * seen_rows
        val_acc = _val_accuracy(student, val_set)
        acc_pct.append(100.0 * val_acc)
        history.append(EpochRecord(breakdown, val_acc, cumulative))

        if traits.halts and not halted:
            if plan.halting_epoch is not None:
                if epoch >= plan.halting_epoch:
                    halt_now(epoch)
            elif epoch >= h_cap:
                halt_now(epoch)
            elif epoch >= plan.plateau_window and (
                acc_pct[-1] - acc_pct[epoch - plan.plateau_window]
                < plan.plateau_epsilon
            ):
                halt_now(epoch)

    return TrainResult(
        student=student,
        trainee=trainee,
        history=history,
        halting_epoch=halting_epoch,
        effective_lambdas=(l1, l2, l3, l4),
        trainee_bytes_at_halt=trainee_bytes,
    )


# -- halting epoch from a recorded history ----------------------------------


def determine_halting_epoch(
    accuracies: Sequence[float],
    epsilon: float = 0.5,
    window: int = 10,
    h_max: int | None = None,
) -> int:
    """Pick h from a validation-accuracy history (percentage points).

    The plateau trigger is the first epoch e >= window whose accuracy gained
    less than ``epsilon`` points over the trailing window, i.e.
    acc(e) - acc(e - window + 1) < epsilon.  The halt is then backdated to
    where the plateau began, h = max(e - window + 1, window); with no
    trigger h is the history length.  ``h_max`` caps the result, and a
    history shorter than the window halts at its own length.
    """
    if window < 1:
        raise ValueError("window must be positive")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    length = len(accuracies)
    if length == 0:
        raise ValueError("empty accuracy history")
    acc = [float(a) for a in accuracies]
    h = length
    if length >= window:
        for e in range(window, length + 1):
            if acc[e - 1] - acc[e - window] < epsilon:
                h = max(e - window + 1, window)
                break
    if h_max is not None:
        h = min(h, h_max)
    return h


# -- loss-weight search on the simplex --------------------------------------


def softmax_simplex(genome: np.ndarray) -> tuple[float, float, float]:
    """Map an unconstrained 3-vector to a strictly interior simplex point."""
    z = np.asarray(genome, dtype=np.float64)
    z = np.exp(z - z.max())
    z /= z.sum()
    return (float(z[0]), float(z[1]), float(z[2]))


def random_interior_points(seed: int, count: int) -> list[tuple[float, float, float]]:
    """Baseline draw: ``count`` simplex points from the same stream the
    evolutionary search seeds its initial population with."""
    rng = np.random.default_rng(seed)
    genomes = rng.normal(size=(count, 3))
    return [softmax_simplex(g) for g in genomes]


@dataclass(frozen=True)
class DEBudget:
    population: int = 20
    generations: int = 15
    differential_weight: float = 0.7
    crossover: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population < 4:
            raise ValueError("population must be at least 4")
        if self.generations < 0:
            raise ValueError("generations must be non-negative")
        if not 0.0 < self.differential_weight <= 2.0:
            raise ValueError("differential_weight must lie in (0, 2]")
        if not 0.0 <= self.crossover <= 1.0:
            raise ValueError("crossover must lie in [0, 1]")


@dataclass(frozen=True)
class LambdaSolution:
    lambdas: tuple[float, float, float]
    fitness: float
    evaluations: int


def optimize_lambdas(
    score: Callable[[tuple[float, float, float]], float],
    budget: DEBudget = DEBudget(),
) -> LambdaSolution:
    """Maximise ``score`` over the open simplex by differential evolution.

    Genomes live in R^3 and decode through a softmax, so every candidate is
    strictly interior and sums to 1.  rand/1/bin with greedy replacement:
    the population's best fitness never decreases, and because the initial
    population is the ``random_interior_points`` draw for the same seed and
    count, the result is never worse than that baseline.  If every
    evaluation came back identical the tuned point carries no information
    and the uniform weights are returned instead.
    """
    rng = np.random.default_rng(budget.seed)
    genomes = rng.normal(size=(budget.population, 3))
    fitness = np.array([score(softmax_simplex(g)) for g in genomes], dtype=np.float64)
    evaluations = budget.population
    all_equal = bool(np.all(fitness == fitness[0]))

    for _ in range(budget.generations):
        for i in range(budget.population):
            others = [j for j in range(budget.population) if j != i]
            a, b, c = rng.choice(others, size=3, replace=False)
            mutant = genomes[a] + budget.differential_weight * (genomes[b] - genomes[c])
            cross = rng.random(3) < budget.crossover
            cross[rng.integers(3)] = True
            trial = np.where(cross, mutant, genomes[i])
            trial_fit = float(score(softmax_simplex(trial)))
            evaluations += 1
            all_equal = all_equal and trial_fit == fitness[0]
            if trial_fit > fitness[i]:
                genomes[i] = trial
                fitness[i] = trial_fit

    if all_equal:
        uniform = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
        return LambdaSolution(uniform, float(fitness[0]), evaluations)
    best = int(np.argmax(fitness))
    return LambdaSolution(softmax_simplex(genomes[best]), float(fitness[best]), evaluations)


def literal_lambda_point(
    ce_student: float,
    attention: float,
    distillation: float,
    epsilon: float = 1e-6,
) -> tuple[float, float, float]:
    """Direct minimiser of l1*CE + l2*AL + l3*DL over the simplex.

    The optimum of a linear objective sits at the vertex of the smallest
    component; this returns that vertex pulled ``epsilon`` inside so the
    weights stay strictly interior.  Available for comparison only -- the
    evolutionary search against validation accuracy is the supported path,
    since minimising the weighted loss in the weights themselves just finds
    the cheapest term.
    """
    components = (ce_student, attention, distillation)
    low = min(range(3), key=lambda i: components[i])
    point = [epsilon, epsilon, epsilon]
    point[low] = 1.0 - 2.0 * epsilon
    return (point[0], point[1], point[2])


# -- curvature probe for the per-coordinate loss surface ---------------------


@dataclass(frozen=True)
class LemmaPoint:
    """A one-layer diagonal model s_i = w * x_i + b with frozen guidance.

    ``teacher_maps`` holds the teacher's already-normalized attention rows
    and ``student_map_norm`` the frozen normaliser C for the student side,
    matching the convention that guidance terms are constants of the probe.
    """

    w: np.ndarray  # (k,) diagonal weights
    b: np.ndarray  # (k,) bias
    x: np.ndarray  # (n, k) inputs
    labels: np.ndarray  # (n,) 1-based
    teacher_logits: np.ndarray  # (n, k)
    teacher_maps: np.ndarray  # (n, k), rows normalized
    student_map_norm: float
    lambdas: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 1.0)
    ce_trainee: float = 0.0  # constant w.r.t. the probe input

    def __post_init__(self) -> None:
        for name in ("w", "b", "x", "labels", "teacher_logits", "teacher_maps"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        object.__setattr__(self, "labels", self.labels.astype(np.int64))
        if self.student_map_norm <= 0:
            raise ValueError("student_map_norm must be positive")


def lemma_losses(point: LemmaPoint, x: np.ndarray) -> dict[str, float]:
    """Loss terms of the probe model at inputs ``x`` (float64 throughout)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    s = point.w * x + point.b
    shifted = s - s.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ce = float(-logp[np.arange(n), point.labels - 1].mean())
    al_rows = ((point.teacher_maps - s / point.student_map_norm) ** 2).sum(axis=1)
    al = float(al_rows.mean())
    dl = float(((point.teacher_logits - s) ** 2).sum(axis=1).mean())
    l1, l2, l3, l4 = point.lambdas
    combined = l1 * ce + l2 * al + l3 * dl + l4 * point.ce_trainee
    return {"ce_student": ce, "attention": al, "distillation": dl, "combined": combined}


def _analytic_curvature(point: LemmaPoint, term: str) -> np.ndarray:
    """Closed-form d2/dx_ij^2 of each term at the probe point, shape (n, k).

    With s = w*x + b the chain rule pulls out w^2 per coordinate: the CE
    Hessian diagonal is softmax curvature p(1-p), the guidance terms are
    plain quadratics (the attention one through the frozen normaliser C).
    """
    n = point.x.shape[0]
    s = point.w * point.x + point.b
    shifted = s - s.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)
    w2 = np.broadcast_to(point.w**2, s.shape)
    curvatures = {
        "ce_student": w2 * p * (1.0 - p) / n,
        "attention": 2.0 * w2 / (point.student_map_norm**2 * n),
        "distillation": 2.0 * w2 / n,
    }
    l1, l2, l3, _ = point.lambdas
    curvatures["combined"] = (
        l1 * curvatures["ce_student"]
        + l2 * curvatures["attention"]
        + l3 * curvatures["distillation"]
    )
    return curvatures[term]


@dataclass(frozen=True)
class ProbeReport:
    term: str
    estimates: np.ndarray  # (n, k) central second differences
    analytic: np.ndarray  # (n, k) closed-form curvature
    min_estimate: float


def convexity_probe(point: LemmaPoint, term: str = "combined", step: float = 0.05) -> ProbeReport:
    """Second differences of one loss term in every input coordinate.

    (f(x + h e) - 2 f(x) + f(x - h e)) / h^2 per coordinate, next to the
    closed form from ``_analytic_curvature``; ``min_estimate`` is the
    smallest observed curvature (non-negative when the term is convex in
    each input coordinate).
    """
    if term not in ("ce_student", "attention", "distillation", "combined"):
        raise ValueError(f"unknown term {term!r}")
    if step <= 0:
        raise ValueError("step must be positive")
    n, k = point.x.shape
    base = lemma_losses(point, point.x)[term]
    estimates = np.empty((n, k))
    for i in range(n):
        for j in range(k):
            bump = np.zeros_like(point.x)
            bump[i, j] = step
            up = lemma_losses(point, point.x + bump)[term]
            down = lemma_losses(point, point.x - bump)[term]
            estimates[i, j] = (up - 2.0 * base + down) / step**2
    return ProbeReport(
        term=term,
        estimates=estimates,
        analytic=_analytic_curvature(point, term),
        min_estimate=float(estimates.min()),
    )
