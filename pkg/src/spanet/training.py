"""Training engine: circle loss, NAG descent, LR schedules, the epoch loop,
and evaluation metrics.

Circle loss scores each embedding by cosine similarity against per-class
proxy vectors (the classifier rows). Per sample, with s_p the similarity to
the true class and s_n the similarities to the other classes, the loss is

    log(1 + sum_j exp(gamma * (a_n_j * s_n_j - a_p * s_p)))

averaged over the batch. The self-paced weights a_p = max(0, 1 + m - s_p)
and a_n = max(0, s_n + m) are treated as constants during differentiation,
so scores already near their optimum receive small gradients;
`pinned_weights` fixes both at 1, which makes the loss an ordinary smooth
function of the scores (the mode used by gradient checks and the
monotonicity tests).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractViolation, DataError, NumericError

# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


@dataclass
class CircleLossConfig:
    gamma: float = 32.0
    margin: float = 0.25
    pinned_weights: bool = False

    def __post_init__(self):
        if self.gamma <= 0:
            raise ContractViolation(f"gamma must be positive, got {self.gamma}")
        if not 0.0 <= self.margin < 1.0:
            raise ContractViolation(f"margin must lie in [0, 1), got {self.margin}")


def _check_labels(labels, num_classes):
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DataError(f"labels must be a flat vector, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise DataError(f"label {bad} outside the {num_classes}-class range")
    return labels.astype(np.intp)


def circle_loss_from_scores(scores: T.Tensor, labels, config: CircleLossConfig) -> T.Tensor:
    """Batch-mean circle loss over an (N, num_classes) similarity matrix."""
    N, K = scores.data.shape
    y = _check_labels(labels, K)
    if y.size != N:
        raise DataError(f"{N} score rows but {y.size} labels")

    s = scores.data
    rows = np.arange(N)
    sp = s[rows, y]
    neg_mask = np.ones((N, K), dtype=bool)
    neg_mask[rows, y] = False

    if config.pinned_weights:
        a_p = np.ones(N, dtype=s.dtype)
        a_n = np.ones((N, K), dtype=s.dtype)
    else:
        a_p = np.maximum(0.0, 1.0 + config.margin - sp)
        a_n = np.maximum(0.0, s + config.margin)

    g = config.gamma
    z = g * (a_n * s - (a_p * sp)[:, None])
    z[~neg_mask] = -np.inf

    m = np.maximum(z.max(axis=1), 0.0) if K > 1 else np.zeros(N, dtype=s.dtype)
    ez = np.exp(z - m[:, None], where=neg_mask, out=np.zeros_like(z))
    denom = np.exp(-m) + ez.sum(axis=1)
    per_sample = m + np.log(denom)
    data = np.asarray(per_sample.mean(), dtype=s.dtype)

    def make_bw(out):
        def bw():
            if not scores.requires_grad:
                return
            go = float(out.grad)
            p = ez / denom[:, None]  # dLoss_n/dz_j
            ds = np.where(neg_mask, p * g * a_n, 0.0)
            ds[rows, y] = -g * a_p * p.sum(axis=1)
            T._accumulate(scores, (go / N) * ds.astype(s.dtype))

        return bw

    return T.record_op(data, (scores,), make_bw)


def circle_loss(embeddings: T.Tensor, labels, proxies: T.Tensor, config: CircleLossConfig) -> T.Tensor:
    """Cosine-similarity circle loss; gradients reach embeddings and proxies."""
    if embeddings.data.shape[1] != proxies.data.shape[1]:
        raise DataError(
            f"embedding width {embeddings.data.shape} does not match proxies "
            f"{proxies.data.shape}"
        )
    scores = T.matmul(T.row_normalize(embeddings), T.transpose2d(T.row_normalize(proxies)))
    return circle_loss_from_scores(scores, labels, config)


def cross_entropy(logits: T.Tensor, labels) -> T.Tensor:
    """Mean softmax cross-entropy with integer labels (stable log-sum-exp)."""
    N, K = logits.data.shape
    y = _check_labels(labels, K)
    if y.size != N:
        raise DataError(f"{N} logit rows but {y.size} labels")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    data = np.asarray((lse - z[np.arange(N), y]).mean(), dtype=z.dtype)

    def make_bw(out):
        def bw():
            if not logits.requires_grad:
                return
            go = float(out.grad)
            soft = np.exp(z - m)
            soft /= soft.sum(axis=1, keepdims=True)
            soft[np.arange(N), y] -= 1.0
            T._accumulate(logits, (go / N) * soft)

        return bw

    return T.record_op(data, (logits,), make_bw)


# ---------------------------------------------------------------------------
# optimizer and schedules
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """Velocity buffers for NAG descent, keyed by parameter name.

    Recurrence (fixed):  v <- momentum * v - lr * grad;  theta <- theta + v.
    The gradient is taken at the currently stored parameters, which carry the
    accumulated velocity, i.e. the lookahead point of the underlying primal
    sequence; with momentum = 0 this is plain SGD.
    """

    learning_rate: float
    momentum: float = 0.9
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ContractViolation(f"momentum must lie in [0, 1), got {self.momentum}")


def nag_step(params, state: OptimizerState):
    """One NAG update over (name, tensor) pairs; grads must be populated."""
    for name, tensor in params:
        if tensor.grad is None:
            raise ContractViolation(f"parameter {name!r} has no gradient")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(tensor.data)
        v = state.momentum * v - state.learning_rate * tensor.grad
        state.velocity[name] = v
        tensor.data = tensor.data + v
        tensor.grad = None


@dataclass
class LRSchedule:
    kind: str  # "cosine" or "plateau"
    lr_max: float
    lr_min: float = 0.0
    period: int = 100  # cosine half-period in epochs
    factor: float = 0.1  # plateau decay
    patience: int = 5

    def __post_init__(self):
        if self.kind not in ("cosine", "plateau"):
            raise ContractViolation(f"unknown schedule kind {self.kind!r}")
        if self.lr_max < self.lr_min:
            raise ContractViolation("lr_max must be >= lr_min")


def lr_at(schedule: LRSchedule, epoch: int, history=()) -> float:
    """Learning rate for `epoch` given the monitored-loss history so far.

    Cosine: lr_min + (lr_max - lr_min)/2 * (1 + cos(pi * t / T)), clamped to
    lr_min past the period. Plateau: multiply by `factor` whenever the loss
    has failed to improve for `patience` consecutive epochs.
    """
    if epoch < 0:
        raise ContractViolation(f"epoch must be >= 0, got {epoch}")
    if schedule.kind == "cosine":
        t = min(epoch, schedule.period)
        lr = schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (
            1.0 + math.cos(math.pi * t / schedule.period)
        )
    else:
        lr = schedule.lr_max
        best = math.inf
        streak = 0
        for loss in history:
            if loss < best:
                best = loss
                streak = 0
            else:
                streak += 1
                if streak >= schedule.patience:
                    lr *= schedule.factor
                    streak = 0
    return min(max(lr, schedule.lr_min), schedule.lr_max)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean; 0 when both rates are 0."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: list  # (class_id, precision, recall, f1, support)
    confusion: np.ndarray  # rows = true class, cols = predicted

    @property
    def per_class_f1(self):
        return {cid: f1 for cid, _, _, f1, _ in self.per_class}


def compute_metrics(y_true, y_pred, num_classes: int) -> MetricsReport:
    y_true = _check_labels(y_true, num_classes)
    y_pred = _check_labels(y_pred, num_classes)
    if y_true.size != y_pred.size:
        raise DataError(f"{y_true.size} true labels but {y_pred.size} predictions")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)

    per_class = []
    for c in range(num_classes):
        tp = conf[c, c]
        fp = conf[:, c].sum() - tp
        fn = conf[c, :].sum() - tp
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        per_class.append((c, float(prec), float(rec), f1_score(prec, rec), int(conf[c].sum())))

    acc = float(np.trace(conf) / conf.sum()) if conf.sum() else 0.0
    return MetricsReport(
        accuracy=acc,
        macro_precision=float(np.mean([p for _, p, _, _, _ in per_class])),
        macro_recall=float(np.mean([r for _, _, r, _, _ in per_class])),
        macro_f1=float(np.mean([f for _, _, _, f, _ in per_class])),
        per_class=per_class,
        confusion=conf,
    )


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float | None = None
    val_acc: float | None = None


def _batch_loss(network, X, y, loss_kind, circle_cfg, train_mode):
    """Loss tensor plus the class-score matrix that predictions argmax over.

    Cross-entropy classifies by the raw classifier logits. Circle training
    optimizes cosine similarity against the classifier-row proxies, which is
    norm-invariant in the proxies, so its decision rule is the cosine score
    matrix itself (gamma scaling cannot change the argmax).
    """
    if not train_mode:
        with T.no_tape():
            return _batch_loss(network, X, y, loss_kind, circle_cfg, train_mode=True)
    logits, embedding = network.forward(T.constant(X), train_mode=True)
    if loss_kind == "circle":
        scores = T.matmul(
            T.row_normalize(embedding),
            T.transpose2d(T.row_normalize(T.transpose2d(network.fc_w))),
        )
        loss = circle_loss_from_scores(scores, y, circle_cfg)
        return loss, scores
    return cross_entropy(logits, y), logits


def trainable_parameters(network, loss_kind: str):
    """All weights, minus the classifier bias in circle mode (the cosine
    proxy geometry never touches it; it stays at its init value)."""
    params = network.parameters()
    if loss_kind == "circle":
        params = [(n, t) for n, t in params if n != "fc.bias"]
    return params


def train(
    network,
    train_data,
    *,
    epochs: int,
    batch_size: int,
    schedule: LRSchedule,
    loss: str = "circle",
    circle: CircleLossConfig | None = None,
    momentum: float = 0.9,
    seed: int = 0,
    val_data=None,
    epoch_callback=None,
) -> list[EpochRecord]:
    """Minibatch NAG training; returns one record per epoch.

    `train_data`/`val_data` expose __len__ and materialize(indices, rng) ->
    (X, y); the training set applies its augmentation with the passed rng,
    validation data must materialize deterministically. The plateau schedule
    monitors validation loss when a validation set exists, else train loss.
    """
    n = len(train_data)
    if n == 0:
        raise DataError("training dataset is empty")
    if batch_size < 1 or batch_size > n:
        raise ContractViolation(f"batch size {batch_size} not in [1, {n}]")
    if loss not in ("circle", "cross_entropy"):
        raise ContractViolation(f"unknown loss {loss!r}")
    circle = circle or CircleLossConfig()

    params = trainable_parameters(network, loss)
    state = OptimizerState(learning_rate=schedule.lr_max, momentum=momentum)
    rng = np.random.default_rng(seed)
    records: list[EpochRecord] = []
    monitored: list[float] = []

    for epoch in range(epochs):
        state.learning_rate = lr_at(schedule, epoch, monitored)
        perm = rng.permutation(n)
        total_loss = 0.0
        total_correct = 0
        for bi, start in enumerate(range(0, n, batch_size)):
            idx = perm[start : start + batch_size]
            X, y = train_data.materialize(idx, rng)
            T.zero_grads(t for _, t in params)
            loss_t, scores = _batch_loss(network, X, y, loss, circle, train_mode=True)
            loss_val = float(loss_t.data)
            if not np.isfinite(loss_val):
                raise NumericError(
                    f"non-finite loss {loss_val} at epoch {epoch}, batch {bi}"
                )
            T.backward(loss_t)
            nag_step(params, state)
            total_loss += loss_val * len(idx)
            total_correct += int((scores.data.argmax(axis=1) == y).sum())

        rec = EpochRecord(
            epoch=epoch,
            lr=state.learning_rate,
            train_loss=total_loss / n,
            train_acc=total_correct / n,
        )
        if val_data is not None and len(val_data):
            rec.val_loss, rec.val_acc = eval_loss_accuracy(
                network, val_data, batch_size, loss, circle
            )
        monitored.append(rec.val_loss if rec.val_loss is not None else rec.train_loss)
        records.append(rec)
        if epoch_callback is not None and epoch_callback(rec):
            break
    return records


def eval_loss_accuracy(network, data, batch_size, loss_kind="cross_entropy",
                       circle_cfg=None, rng=None):
    """Mean loss and accuracy over a dataset, inference mode."""
    circle_cfg = circle_cfg or CircleLossConfig()
    n = len(data)
    total_loss = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        X, y = data.materialize(idx, rng)
        loss_t, scores = _batch_loss(network, X, y, loss_kind, circle_cfg, train_mode=False)
        total_loss += float(loss_t.data) * len(idx)
        correct += int((scores.data.argmax(axis=1) == y).sum())
    return total_loss / n, correct / n


def evaluate(network, data, batch_size: int = 32, decision: str = "logits") -> MetricsReport:
    """Argmax-over-class-scores predictions and the full metrics report.

    decision="logits" scores by the classifier output (cross-entropy models);
    decision="cosine" scores by cosine similarity to the classifier-row
    proxies (circle-trained models).
    """
    if decision not in ("logits", "cosine"):
        raise ContractViolation(f"unknown decision rule {decision!r}")
    n = len(data)
    if n == 0:
        raise DataError("evaluation dataset is empty")
    trues = []
    preds = []
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        X, y = data.materialize(idx, None)
        logits, embedding = network.forward(T.constant(X), train_mode=False)
        if decision == "cosine":
            e = embedding.data
            e = e / np.sqrt((e * e).sum(axis=1, keepdims=True) + 1e-12)
            p = network.fc_w.data.T
            p = p / np.sqrt((p * p).sum(axis=1, keepdims=True) + 1e-12)
            scores = e @ p.T
        else:
            scores = logits.data
        preds.append(scores.argmax(axis=1))
        trues.append(np.asarray(y))
    return compute_metrics(
        np.concatenate(trues), np.concatenate(preds), network.config.num_classes
    )


# ---------------------------------------------------------------------------
# report serialization
# ---------------------------------------------------------------------------


def run_log_csv(records) -> str:
    lines = ["epoch,lr,train_loss,train_acc,val_loss,val_acc"]
    for r in records:
        vl = f"{r.val_loss:.8f}" if r.val_loss is not None else ""
        va = f"{r.val_acc:.6f}" if r.val_acc is not None else ""
        lines.append(
            f"{r.epoch},{r.lr:.8g},{r.train_loss:.8f},{r.train_acc:.6f},{vl},{va}"
        )
    return "\n".join(lines) + "\n"


def metrics_csv(report: MetricsReport, class_names=None) -> str:
    lines = ["class,precision,recall,f1,support"]
    for cid, prec, rec, f1, support in report.per_class:
        name = class_names[cid] if class_names else str(cid)
        lines.append(f"{name},{prec:.6f},{rec:.6f},{f1:.6f},{support}")
    lines.append(
        f"macro,{report.macro_precision:.6f},{report.macro_recall:.6f},"
        f"{report.macro_f1:.6f},{int(report.confusion.sum())}"
    )
    lines.append(f"accuracy,{report.accuracy:.6f},,,")
    return "\n".join(lines) + "\n"


def confusion_text(report: MetricsReport, class_names=None) -> str:
    k = report.confusion.shape[0]
    names = class_names or [str(i) for i in range(k)]
    width = max(max(len(n) for n in names), 6)
    cell = max(width, int(report.confusion.max() if report.confusion.size else 1) // 10 + 2, 6)
    header = " " * (width + 2) + "".join(f"{n:>{cell}}" for n in names)
    lines = [header]
    for i in range(k):
        row = "".join(f"{int(v):>{cell}}" for v in report.confusion[i])
        lines.append(f"{names[i]:<{width}}  {row}")
    return "\n".join(lines) + "\n"
