"""Few-shot training of the view aggregator.

Per shape the trainer computes two descriptors: the prompt-enhanced
aggregate (frozen, no gradient) and the encoder output. The loss is
cross-entropy of scaled prompt logits against the label, plus, when
distillation is on, the squared distance pulling the encoder output toward
the frozen aggregate. Only encoder parameters receive gradients; prompt and
view features stay constant throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import aggregate, kernels
from . import tensor as T
from .encoder import EncoderConfig, EncoderParams, encode, encode_batch
from .errors import DimensionError, InsufficientDataError, NumericError, DataError
from .rng import Stream, derive_seed
from .store import FeatureSet, PromptBank, ShapeRecord, l2_normalize_rows


@dataclass
class TrainConfig:
    shots: int = 16
    epochs: int = 50
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0001
    batch_size: int = 32
    logit_scale: float = aggregate.DEFAULT_LOGIT_SCALE
    seed: int = 0
    distill_on: bool = True
    decoupled_weight_decay: bool = False

    def validate(self) -> None:
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def sample_k_shot(train_set: FeatureSet, k: int, seed: int) -> FeatureSet:
    """Pick exactly k shapes per class, seeded, without replacement.

    Classes are processed in ascending label order; the chosen shapes keep
    their on-disk relative order in the result.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    by_class: dict[int, list[int]] = {}
    for idx, rec in enumerate(train_set.shapes):
        by_class.setdefault(rec.label_index, []).append(idx)
    stream = Stream(derive_seed(seed, "k-shot"))
    chosen: list[int] = []
    for label in sorted(by_class):
        pool = by_class[label]
        if len(pool) < k:
            raise InsufficientDataError(
                f"class {label} has {len(pool)} samples, fewer than k={k}")
        chosen.extend(stream.choose(pool, k))
    chosen.sort()
    return FeatureSet([train_set.shapes[i] for i in chosen], train_set.dim,
                      backbone_tag=train_set.backbone_tag,
                      normalized=train_set.normalized)


def few_shot_logits(prompts: np.ndarray, descriptor: T.Tensor,
                    scale: float = aggregate.DEFAULT_LOGIT_SCALE) -> T.Tensor:
    """Differentiable version of the zero-shot logit rule."""
    if prompts.ndim != 2 or descriptor.data.ndim != 1 \
            or prompts.shape[1] != descriptor.data.shape[0]:
        raise DimensionError(
            f"prompts {prompts.shape} incompatible with descriptor {descriptor.data.shape}")
    if scale <= 0:
        raise ValueError("logit scale must be positive")
    return T.scale(T.matmul(T.constant(prompts), descriptor), scale)


def classification_loss(logits: T.Tensor, label: int) -> T.Tensor:
    return T.cross_entropy_logits(logits, label)


def distillation_loss(f_few: T.Tensor, f_zero: np.ndarray) -> T.Tensor:
    """Squared distance to the frozen zero-shot descriptor."""
    f_zero = np.asarray(f_zero, dtype=np.float64)
    if f_few.data.shape != f_zero.shape:
        raise DimensionError(
            f"descriptor shapes disagree: {f_few.data.shape} vs {f_zero.shape}")
    diff = T.sub(f_few, T.constant(f_zero))
    return T.dot(diff, diff)


def total_loss(cls_loss: T.Tensor, fd_loss: T.Tensor | None, distill_on: bool) -> T.Tensor:
    if distill_on and fd_loss is not None:
        return T.add(cls_loss, fd_loss)
    return cls_loss


def adam_step(params: EncoderParams, state: AdamState, config: TrainConfig) -> None:
    """One Adam update over every parameter, from the accumulated gradients.

    Weight decay is coupled L2 by default (decay added to the gradient); the
    decoupled variant shrinks the weights directly instead.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - config.beta1 ** t
    bc2 = 1.0 - config.beta2 ** t
    if config.decoupled_weight_decay:
        wd, decay_mult = 0.0, 1.0 - config.learning_rate * config.weight_decay
    else:
        wd, decay_mult = config.weight_decay, 1.0
    for name, p in params.tensors.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}; training aborted")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        kernels.adam_update(
            p.data.reshape(-1), np.ascontiguousarray(g).reshape(-1),
            state.m[name].reshape(-1), state.v[name].reshape(-1),
            config.learning_rate, config.beta1, config.beta2, config.adam_eps,
            wd, bc1, bc2, decay_mult)
    params.assert_finite()


def shape_loss(rec: ShapeRecord, prompts: np.ndarray, params: EncoderParams,
               config: TrainConfig) -> tuple[T.Tensor, float, float]:
    """Loss graph for one shape; returns (loss, cls value, fd value)."""
    f_zero = aggregate.aggregate_peva(prompts, rec.views).descriptor
    f_few = encode(rec.views, params)
    logits = few_shot_logits(prompts, f_few, config.logit_scale)
    cls_loss = classification_loss(logits, rec.label_index)
    if config.distill_on:
        fd_loss = distillation_loss(f_few, f_zero)
        return total_loss(cls_loss, fd_loss, True), cls_loss.item(), fd_loss.item()
    return cls_loss, cls_loss.item(), 0.0


def train(train_features: FeatureSet, bank: PromptBank, config: TrainConfig,
          encoder_config: EncoderConfig | None = None,
          eval_features: FeatureSet | None = None,
          ) -> tuple[EncoderParams, list[dict]]:
    """Run the full few-shot loop; returns trained params and per-epoch logs.

    Everything is a pure function of (data, config): the same seed produces
    bit-identical parameters and logs.
    """
    config.validate()
    if not train_features.shapes:
        raise DataError("training set is empty")
    if encoder_config is None:
        encoder_config = EncoderConfig(dim=train_features.dim)
    params = EncoderParams.init(encoder_config, config.seed)
    state = AdamState()
    shuffle = Stream(derive_seed(config.seed, "epoch-shuffle"))
    prompts = bank.features
    n = len(train_features.shapes)
    logs: list[dict] = []
    for epoch in range(1, config.epochs + 1):
        order = shuffle.permutation(n)
        cls_sum = 0.0
        fd_sum = 0.0
        for start in range(0, n, config.batch_size):
            records = [train_features.shapes[i]
                       for i in order[start:start + config.batch_size]]
            params.zero_grad()
            descriptors = encode_batch([r.views for r in records], params)
            logits = T.scale(T.matmul(descriptors, T.constant(prompts.T)),
                             config.logit_scale)
            ce = T.cross_entropy_rows(logits, [r.label_index for r in records])
            cls_sum += float(ce.data.sum())
            if config.distill_on:
                targets = np.stack([
                    aggregate.aggregate_peva(prompts, r.views).descriptor
                    for r in records])
                fd = T.rows_sq_dist(descriptors, targets)
                fd_sum += float(fd.data.sum())
                batch_loss = T.add(ce, fd)
            else:
                batch_loss = ce
            T.scale(T.tsum(batch_loss), 1.0 / len(records)).backward()
            adam_step(params, state, config)
        entry = {
            "epoch": epoch,
            "loss_cls": cls_sum / n,
            "loss_fd": fd_sum / n,
            "loss_total": (cls_sum + fd_sum) / n,
        }
        if eval_features is not None:
            entry["test_acc"] = evaluate(
                eval_features, bank, "few", params=params,
                scale=config.logit_scale).accuracy
        logs.append(entry)
    return params, logs


def gradcheck_suite(seed: int = 0, tol: float = 1e-4) -> T.GradCheckReport:
    """Finite-difference check of every encoder parameter through both losses.

    Uses a deliberately small encoder on a random two-shape instance so a
    full sweep over all partials stays fast.
    """
    stream = Stream(derive_seed(seed, "gradcheck"))
    dim, views, n_classes = 8, 3, 4
    cfg = EncoderConfig(dim=dim, proj_width=8, heads=2, mlp_hidden=16)
    params = EncoderParams.init(cfg, seed)
    prompts = l2_normalize_rows(stream.normals(n_classes * dim).reshape(n_classes, dim))
    shapes = [
        ShapeRecord("gc0", 1, l2_normalize_rows(stream.normals(views * dim).reshape(views, dim))),
        ShapeRecord("gc1", 3, l2_normalize_rows(stream.normals(views * dim).reshape(views, dim))),
    ]
    config = TrainConfig(shots=1, logit_scale=10.0, seed=seed)

    def f() -> T.Tensor:
        total: T.Tensor | None = None
        for rec in shapes:
            loss, _, _ = shape_loss(rec, prompts, params, config)
            total = loss if total is None else T.add(total, loss)
        assert total is not None
        return T.scale(total, 1.0 / len(shapes))

    return T.grad_check(f, params.tensors, h=1e-4, tol=tol)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

EVAL_MODES = ("zero_peva", "zero_avg", "few")


@dataclass
class EvalReport:
    accuracy: float
    per_class: dict[str, float]
    confusion: dict[str, dict[str, int]]
    mode: str
    total: int


def _predict_one(rec: ShapeRecord, prompts: np.ndarray, mode: str,
                 params: EncoderParams | None, scale: float) -> int:
    if mode == "zero_peva":
        descriptor = aggregate.aggregate_peva(prompts, rec.views).descriptor
    elif mode == "zero_avg":
        descriptor = aggregate.aggregate_average(rec.views)
    elif mode == "few":
        assert params is not None
        descriptor = encode(rec.views, params).data
    else:
        raise ValueError(f"unknown evaluation mode {mode!r}; pick from {EVAL_MODES}")
    return aggregate.predict(aggregate.zero_shot_logits(prompts, descriptor, scale))


def evaluate(features: FeatureSet, bank: PromptBank, mode: str,
             params: EncoderParams | None = None,
             scale: float = aggregate.DEFAULT_LOGIT_SCALE,
             threads: int = 1) -> EvalReport:
    """Accuracy over a feature set, plus per-class accuracy and confusion counts."""
    if mode not in EVAL_MODES:
        raise ValueError(f"unknown evaluation mode {mode!r}; pick from {EVAL_MODES}")
    if mode == "few" and params is None:
        raise ValueError("mode 'few' needs encoder parameters")
    names = bank.categories
    n_classes = len(names)
    for rec in features.shapes:
        if not 0 <= rec.label_index < n_classes:
            raise DataError(
                f"shape {rec.shape_id!r}: label {rec.label_index} out of range "
                f"for {n_classes} categories")
    prompts = bank.features
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            predictions = list(pool.map(
                lambda rec: _predict_one(rec, prompts, mode, params, scale),
                features.shapes))
    else:
        predictions = [_predict_one(rec, prompts, mode, params, scale)
                       for rec in features.shapes]
    correct = 0
    class_total = [0] * n_classes
    class_correct = [0] * n_classes
    confusion: dict[str, dict[str, int]] = {}
    for rec, pred in zip(features.shapes, predictions):
        class_total[rec.label_index] += 1
        if pred == rec.label_index:
            correct += 1
            class_correct[rec.label_index] += 1
        row = confusion.setdefault(names[rec.label_index], {})
        row[names[pred]] = row.get(names[pred], 0) + 1
    per_class = {
        names[i]: class_correct[i] / class_total[i]
        for i in range(n_classes) if class_total[i] > 0
    }
    return EvalReport(
        accuracy=correct / len(features.shapes),
        per_class=per_class,
        confusion=confusion,
        mode=mode,
        total=len(features.shapes),
    )
