"""Desk-side pipeline: sweep shared depths, slim the teacher, distill.

For each candidate prefix depth l the pretrained teacher is copied, its
non-shared tail pruned by magnitude dropout and rewritten by the compressor
until the device budgets hold, and the result trained as the student of a
two-teacher distillation run (sharing its first l layers with a fresh
trainee).  Candidates are ranked by the final epoch's mean training
combined loss; infeasible depths stay in the report with their closest
model but never win.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from edgeslim import compressor, pruning
from edgeslim.archspec import NetworkSpec, network_to_dict
from edgeslim.datasets import Dataset, train_test_split
from edgeslim.distill import (
    DEBudget,
    DistillPlan,
    optimize_lambdas,
    share_prefix_layers,
    train,
)
from edgeslim.engine.model import MaskedModel, copy_model, init_model
from edgeslim.engine.training import evaluate_loss, predict
from edgeslim.distill import network_flops
from edgeslim.metrics import MetricsReport, evaluate_predictions
from edgeslim.resources import DeviceProfile, ResourceReport, resolve_alpha


class ReferenceMismatch(ValueError):
    """The provided teacher does not reproduce its recorded training loss."""


def derive_seed(*parts) -> int:
    """Stable per-stage seed from a hash of the labelled parts."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def prefix_sweep(depth: int) -> list[int]:
    """Candidate shared depths: from half the stack to the full stack, in
    about ten steps (l0 clamps to 1 so a single-layer network still sweeps).
    """
    if depth < 1:
        raise ValueError("depth must be positive")
    start = max(1, depth // 2)
    step = max(1, math.ceil(depth / 10))
    return list(range(start, depth + 1, step))


@dataclass(frozen=True)
class PipelineSettings:
    omega: float = 0.5
    dropout_c: float = 1.0
    dropout_max_iteration: int = 20
    dropout_initial_rate: float = 0.5
    dropout_input_rate: float = 0.8
    dropout_eta: float = 0.05
    size_penalty: float = 0.0
    scheme: str = "S6"
    lambdas: tuple[float, float, float] | None = None
    de_population: int = 8
    de_generations: int = 4
    de_epochs: int = 6
    total_epochs: int = 30
    h_max: int | None = None
    plateau_epsilon: float = 0.5
    plateau_window: int = 10
    eta: float = 0.05
    batch_size: int = 32
    val_fraction: float = 0.3
    seed: int = 0
    reference_tolerance: float = 1e-6
    workers: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        if self.total_epochs < 1 or self.de_epochs < 1:
            raise ValueError("epoch counts must be positive")
        if self.workers < 0:
            raise ValueError("workers must be non-negative")


@dataclass
class CandidateRecord:
    l: int
    spec: NetworkSpec
    feasible: bool
    report: ResourceReport
    lambdas: tuple[float, float, float] | None
    final_combined_loss: float | None
    halting_epoch: int | None
    val_accuracy: float | None
    metrics: MetricsReport | None
    training_flops: int | None
    dropout_rounds: int
    compression_steps: int
    model: MaskedModel | None = None  # trained student; set on feasible rows

    def to_dict(self) -> dict:
        return {
            "l": self.l,
            "spec": network_to_dict(self.spec),
            "feasible": self.feasible,
            "report": self.report.to_dict(),
            "lambdas": list(self.lambdas) if self.lambdas else None,
            "final_combined_loss": self.final_combined_loss,
            "halting_epoch": self.halting_epoch,
            "val_accuracy": self.val_accuracy,
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "training_flops": self.training_flops,
            "dropout_rounds": self.dropout_rounds,
            "compression_steps": self.compression_steps,
        }


@dataclass
class PipelineResult:
    records: list[CandidateRecord]
    best: CandidateRecord | None

    @property
    def all_infeasible(self) -> bool:
        return self.best is None

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "best_l": self.best.l if self.best else None,
            "all_infeasible": self.all_infeasible,
        }


def select(records: list[CandidateRecord]) -> CandidateRecord | None:
    """Best feasible candidate: lowest final combined loss, then fewer
    inference FLOPs, then the shallower shared depth."""
    feasible = [r for r in records if r.feasible]
    if not feasible:
        return None
    return min(
        feasible,
        key=lambda r: (r.final_combined_loss, r.report.total_flops, r.l),
    )


def _with_prefix(model: MaskedModel, prefix: int) -> MaskedModel:
    spec = replace(model.spec, shared_prefix=prefix)
    clone = copy_model(model)
    return MaskedModel(spec=spec, layers=clone.layers, dtype=clone.dtype)


def _restudent(student: MaskedModel, trainee: MaskedModel, prefix: int, shared: bool):
    """Fresh aliased copies so each training run starts from the same point."""
    s, t = copy_model(student), copy_model(trainee)
    if shared:
        share_prefix_layers(s, t, prefix)
    return s, t


def _evaluate_candidate(job: tuple) -> CandidateRecord:
    l, pretrained, reference_loss, dataset, device, settings = job
    teacher = _with_prefix(pretrained, l)

    if teacher.spec.non_shared_count == 0:
        # Full sharing leaves no tail to slim; the candidate is the teacher.
        from edgeslim.engine.model import connection_count

        dropout = pruning.DropoutResult(
            model=teacher, surviving=connection_count(teacher), rounds=[]
        )
    else:
        dropout = pruning.run(
            teacher,
            dataset,
            eta=settings.dropout_eta,
            reference_loss=reference_loss,
            c=settings.dropout_c,
            max_iteration=settings.dropout_max_iteration,
            initial_rate=settings.dropout_initial_rate,
            input_rate=settings.dropout_input_rate,
            batch_size=settings.batch_size,
            seed=derive_seed(settings.seed, "dropout", l),
        )
    outcome = compressor.run(
        dropout.model,
        device,
        settings.omega,
        size_penalty=settings.size_penalty,
        seed=derive_seed(settings.seed, "compress", l),
    )
    record = CandidateRecord(
        l=l,
        spec=outcome.model.spec,
        feasible=outcome.feasible,
        report=outcome.report,
        lambdas=None,
        final_combined_loss=None,
        halting_epoch=None,
        val_accuracy=None,
        metrics=None,
        training_flops=None,
        dropout_rounds=len(dropout.rounds),
        compression_steps=len(outcome.records),
    )
    if not outcome.feasible:
        return record

    traits_shared = settings.scheme in ("S3", "S5", "S6")
    trainee_spec = replace(pretrained.spec, shared_prefix=l)
    base_trainee = init_model(trainee_spec, seed=derive_seed(settings.seed, "trainee", l))
    base_student = outcome.model

    train_seed = derive_seed(settings.seed, "train", l)
    if settings.lambdas is not None:
        lambdas = settings.lambdas
    else:
        eval_seed = derive_seed(settings.seed, "lambda-eval", l)

        def score(lams: tuple[float, float, float]) -> float:
            s, t = _restudent(base_student, base_trainee, l, traits_shared)
            plan = DistillPlan(
                *lams,
                total_epochs=settings.de_epochs,
                scheme=settings.scheme,
                eta=settings.eta,
                batch_size=settings.batch_size,
                seed=eval_seed,
                val_fraction=settings.val_fraction,
                plateau_epsilon=settings.plateau_epsilon,
                plateau_window=settings.plateau_window,
                h_max=min(settings.h_max, settings.de_epochs - 1)
                if settings.h_max is not None
                else None,
            )
            trainee_arg = t if settings.scheme != "S1" else None
            teacher_arg = pretrained if settings.scheme not in ("S2", "S3") else None
            return train(s, trainee_arg, teacher_arg, dataset, plan).final_accuracy

        budget = DEBudget(
            population=settings.de_population,
            generations=settings.de_generations,
            seed=derive_seed(settings.seed, "lambda-de", l),
        )
        lambdas = optimize_lambdas(score, budget).lambdas

    student, trainee = _restudent(base_student, base_trainee, l, traits_shared)
    plan = DistillPlan(
        *lambdas,
        total_epochs=settings.total_epochs,
        scheme=settings.scheme,
        eta=settings.eta,
        batch_size=settings.batch_size,
        seed=train_seed,
        val_fraction=settings.val_fraction,
        plateau_epsilon=settings.plateau_epsilon,
        plateau_window=settings.plateau_window,
        h_max=settings.h_max,
    )
    trainee_arg = trainee if settings.scheme != "S1" else None
    teacher_arg = pretrained if settings.scheme not in ("S2", "S3") else None
    result = train(student, trainee_arg, teacher_arg, dataset, plan)

    _, val_set = train_test_split(dataset, plan.val_fraction, plan.seed)
    metrics = evaluate_predictions(val_set.labels, predict(result.student, val_set.features), val_set.k)

    record.lambdas = tuple(lambdas)
    record.final_combined_loss = result.history[-1].breakdown.combined
    record.halting_epoch = result.halting_epoch
    record.val_accuracy = result.final_accuracy
    record.metrics = metrics
    record.training_flops = result.total_flops
    record.model = result.student
    return record


def run(
    pretrained: MaskedModel,
    reference_loss: float,
    dataset: Dataset,
    device: DeviceProfile,
    settings: PipelineSettings = PipelineSettings(),
) -> PipelineResult:
    """Sweep shared depths and return every candidate plus the winner.

    The teacher must first reproduce its recorded training loss on this
    dataset (guards against mismatched checkpoint/dataset pairs); then each
    depth runs dropout, compression, the loss-weight search, and the full
    distillation, serially or across worker processes.
    """
    actual = evaluate_loss(pretrained, dataset, batch_size=settings.batch_size)
    if not math.isfinite(actual) or abs(actual - reference_loss) > settings.reference_tolerance:
        raise ReferenceMismatch(
            f"teacher loss {actual:.8f} does not match the recorded "
            f"reference {reference_loss:.8f} (tolerance {settings.reference_tolerance})"
        )
    # A ratio-form memory budget means "this fraction of the teacher's own
    # load", so it pins to the uncompressed network once, up front.
    device = resolve_alpha(device, network_flops(pretrained.spec))

    jobs = [
        (l, pretrained, reference_loss, dataset, device, settings)
        for l in prefix_sweep(pretrained.spec.depth)
    ]
    if settings.workers > 1:
        with ProcessPoolExecutor(max_workers=settings.workers) as pool:
            records = list(pool.map(_evaluate_candidate, jobs))
    else:
        records = [_evaluate_candidate(job) for job in jobs]
    return PipelineResult(records=records, best=select(records))
