"""Training and evaluation harness: image-grouped cross-validation, the Adam
loop with step decay and early stopping, metrics, and the ablation suite.

Determinism contract: every random choice (parameter init, batch shuffling,
dropout masks, augmentation noise) draws from a named stream derived from the
config seed, so identical (config, data) reruns produce identical metrics.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (
    DatasetManifest,
    Sample,
    atomic_write_text,
    image_matrix,
    labels_array,
    question_matrix,
)
from .errors import ConfigError, NumericError
from .kernel import AdamState, GradTape, Tensor, adam_step
from .losses import TAU_CROSS, TAU_INTRA, augment, cross_entropy, info_nce, total_loss
from .model import ModelParams, forward_batch, init_model_params
from .retrieval import KnowledgeBase
from .rng import named_stream


@dataclass
class TrainConfig:
    lr: float = 5e-5
    weight_decay: float = 1e-5
    batch_size: int = 32
    max_epochs: int = 50
    lr_decay: float = 0.98
    lr_decay_every: int = 5
    patience: int = 10
    folds: int = 5
    seed: int = 0
    clip_norm: float = 5.0  # 0 disables clipping
    dropout: float = 0.1
    hidden1: int = 1024
    hidden2: int = 256
    k_filters: int = 4
    retrieval_k: int = 3
    retrieval_tau: float = 0.1
    aug_sigma: float = 0.1
    # ablation switchboard
    frequency: bool = True
    retrieval: bool = True
    contrastive: bool = True
    co_selection: bool = True
    similarity: str = "fidelity"
    fusion_mode: str = "freq_only"
    tie_filters: bool = False
    contrastive_space: str = "spatial"  # or "enhanced"

    def validate(self) -> None:
        positive = {
            "lr": self.lr,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "lr_decay": self.lr_decay,
            "lr_decay_every": self.lr_decay_every,
            "folds": self.folds,
            "k_filters": self.k_filters,
            "retrieval_k": self.retrieval_k,
            "retrieval_tau": self.retrieval_tau,
            "hidden1": self.hidden1,
            "hidden2": self.hidden2,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        for name, value in (
            ("weight_decay", self.weight_decay),
            ("patience", self.patience),
            ("clip_norm", self.clip_norm),
            ("aug_sigma", self.aug_sigma),
        ):
            if value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.similarity not in ("fidelity", "cosine"):
            raise ConfigError(f"similarity must be fidelity or cosine, got {self.similarity!r}")
        if self.fusion_mode not in ("freq_only", "freq_plus_knowledge"):
            raise ConfigError(f"unknown fusion_mode {self.fusion_mode!r}")
        if self.contrastive_space not in ("spatial", "enhanced"):
            raise ConfigError(
                f"contrastive_space must be spatial or enhanced, got {self.contrastive_space!r}"
            )


def schedule_lr(base: float, epoch: int, decay: float = 0.98, every: int = 5) -> float:
    """Step decay: base * decay^(epoch // every), epochs counted from 0."""
    return base * decay ** (epoch // every)


def make_folds(samples: list[Sample], k: int = 5, seed: int = 0) -> np.ndarray:
    """Assign a fold id to every sample, keeping all samples of an image together.

    Distinct image_ids (in first-appearance order) are shuffled by the seed
    and dealt round-robin over the k folds.
    """
    ids: list[str] = []
    seen = set()
    for sample in samples:
        if sample.image_id not in seen:
            seen.add(sample.image_id)
            ids.append(sample.image_id)
    if len(ids) < k:
        raise ConfigError(f"need at least {k} distinct image_ids, found {len(ids)}")
    order = named_stream(seed, "folds").permutation(len(ids))
    fold_of_image = {ids[int(j)]: int(pos % k) for pos, j in enumerate(order)}
    return np.asarray([fold_of_image[s.image_id] for s in samples], dtype=np.int64)


@dataclass
class MetricsReport:
    accuracy: float
    f1: float
    precision: float
    recall: float
    auc: float

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1": self.f1,
            "precision": self.precision,
            "recall": self.recall,
            "auc": self.auc,
        }


def _midranks(x: np.ndarray) -> np.ndarray:
    """Average ranks (1-based); tied values share the mean of their positions."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _binary_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Rank-statistic AUC; tied scores contribute one half."""
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined without both classes")
    ranks = _midranks(scores)
    u = ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def compute_metrics(labels: np.ndarray, probs: np.ndarray) -> MetricsReport:
    """Accuracy plus macro precision/recall/F1/AUC over classes present in labels."""
    preds = probs.argmax(axis=1)
    accuracy = float(np.mean(preds == labels))
    n_classes = probs.shape[1]
    present = [c for c in range(n_classes) if np.any(labels == c)]
    if len(present) < n_classes:
        absent = sorted(set(range(n_classes)) - set(present))
        warnings.warn(f"classes {absent} absent from split; excluded from macro averages",
                      stacklevel=2)
    precisions, recalls, f1s, aucs = [], [], [], []
    for c in present:
        tp = float(np.sum((preds == c) & (labels == c)))
        fp = float(np.sum((preds == c) & (labels != c)))
        fn = float(np.sum((preds != c) & (labels == c)))
        prec = tp / (tp + fp) if tp + fp > 0 else 0.0
        rec = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        precisions.append(prec)
        recalls.append(rec)
        f1s.append(f1)
        if np.any(labels != c):
            aucs.append(_binary_auc(probs[:, c], labels == c))
    auc = float(np.mean(aucs)) if aucs else 0.0
    return MetricsReport(
        accuracy=accuracy,
        f1=float(np.mean(f1s)),
        precision=float(np.mean(precisions)),
        recall=float(np.mean(recalls)),
        auc=auc,
    )


def predict_probs(
    params: ModelParams,
    questions: np.ndarray,
    images: np.ndarray,
    kb: KnowledgeBase | None,
    config: TrainConfig,
) -> np.ndarray:
    result = forward_batch(
        params,
        questions,
        images,
        kb,
        train=False,
        frequency=config.frequency,
        retrieval=config.retrieval,
        co_selection=config.co_selection,
        similarity=config.similarity,
        retrieval_k=config.retrieval_k,
        retrieval_tau=config.retrieval_tau,
    )
    return _softmax_np(result.logits.data)


def evaluate_arrays(
    params: ModelParams,
    questions: np.ndarray,
    images: np.ndarray,
    labels: np.ndarray,
    kb: KnowledgeBase | None,
    config: TrainConfig,
) -> MetricsReport:
    return compute_metrics(labels, predict_probs(params, questions, images, kb, config))


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    ce: float
    contrastive: float
    val_accuracy: float


@dataclass
class FoldResult:
    fold: int
    params: ModelParams
    best_epoch: int
    metrics: MetricsReport
    history: list[EpochRecord] = field(default_factory=list)


def _clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> dict[str, np.ndarray]:
    if clip_norm <= 0:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > clip_norm:
        factor = clip_norm / total
        grads = {name: g * factor for name, g in grads.items()}
    return grads


def train_fold(
    manifest: DatasetManifest,
    samples: list[Sample],
    kb: KnowledgeBase | None,
    config: TrainConfig,
    fold_ids: np.ndarray,
    fold: int,
) -> FoldResult:
    """Train on every fold but `fold`, validate on `fold`, return the best model."""
    config.validate()
    questions = question_matrix(samples)
    images = image_matrix(samples)
    labels = labels_array(samples)
    train_idx = np.flatnonzero(fold_ids != fold)
    val_idx = np.flatnonzero(fold_ids == fold)
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise ConfigError(f"fold {fold} leaves an empty train or validation split")

    params = init_model_params(
        manifest,
        fusion_mode=config.fusion_mode,
        k_filters=config.k_filters,
        hidden1=config.hidden1,
        hidden2=config.hidden2,
        dropout=config.dropout,
        tie_filters=config.tie_filters,
        seed=config.seed,
    )
    named = params.named()
    state = AdamState(named)

    best_acc = -1.0
    best_epoch = -1
    best_snapshot = {name: t.data.copy() for name, t in named.items()}
    best_metrics: MetricsReport | None = None
    epochs_since_best = 0
    history: list[EpochRecord] = []
    step = 0

    for epoch in range(config.max_epochs):
        lr = schedule_lr(config.lr, epoch, config.lr_decay, config.lr_decay_every)
        perm = named_stream(config.seed, "shuffle", fold, epoch).permutation(len(train_idx))
        shuffled = train_idx[perm]
        loss_sum = 0.0
        ce_sum = 0.0
        contrast_sum = 0.0
        for batch_no, start in enumerate(range(0, len(shuffled), config.batch_size)):
            idx = shuffled[start : start + config.batch_size]
            tape = GradTape()
            drop_rng = named_stream(config.seed, "dropout", fold, epoch, batch_no)
            try:
                fwd = forward_batch(
                    params,
                    questions[idx],
                    images[idx],
                    kb,
                    train=True,
                    rng=drop_rng,
                    tape=tape,
                    frequency=config.frequency,
                    retrieval=config.retrieval,
                    co_selection=config.co_selection,
                    similarity=config.similarity,
                    retrieval_k=config.retrieval_k,
                    retrieval_tau=config.retrieval_tau,
                )
                ce = cross_entropy(fwd.logits, labels[idx], tape)
                if config.contrastive:
                    if config.contrastive_space == "spatial":
                        anchor_t, anchor_v = fwd.t, fwd.v
                    else:
                        anchor_t = fwd.features.t_enhanced
                        anchor_v = fwd.features.v_enhanced
                    aug_rng = named_stream(config.seed, "augment", fold, epoch, batch_no)
                    t_aug = augment(anchor_t, config.aug_sigma, aug_rng, tape)
                    v_aug = augment(anchor_v, config.aug_sigma, aug_rng, tape)
                    intra_t = info_nce(anchor_t, t_aug, TAU_INTRA, tape)
                    intra_v = info_nce(anchor_v, v_aug, TAU_INTRA, tape)
                    cross = info_nce(anchor_t, anchor_v, TAU_CROSS, tape)
                else:
                    intra_t = Tensor(0.0)
                    intra_v = Tensor(0.0)
                    cross = Tensor(0.0)
                total, breakdown = total_loss(ce, intra_t, intra_v, cross, tape)
                if not np.isfinite(total.data):
                    raise NumericError(f"loss value is {float(total.data)}")
                for t in named.values():
                    t.zero_grad()
                tape.backward(total)
                grads = {
                    name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                    for name, t in named.items()
                }
                grads = _clip_gradients(grads, config.clip_norm)
                step += 1
                adam_step(named, grads, state, lr=lr, weight_decay=config.weight_decay, t=step)
            except NumericError as exc:
                # locate numeric blow-ups so long runs fail with context
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {batch_no} (fold {fold}): {exc}"
                ) from exc
            loss_sum += breakdown.total * len(idx)
            ce_sum += breakdown.ce * len(idx)
            contrast_sum += (breakdown.total - breakdown.ce) * len(idx)

        val_metrics = evaluate_arrays(
            params, questions[val_idx], images[val_idx], labels[val_idx], kb, config
        )
        history.append(
            EpochRecord(
                epoch=epoch,
                lr=lr,
                train_loss=loss_sum / len(shuffled),
                ce=ce_sum / len(shuffled),
                contrastive=contrast_sum / len(shuffled),
                val_accuracy=val_metrics.accuracy,
            )
        )
        if val_metrics.accuracy > best_acc:
            best_acc = val_metrics.accuracy
            best_epoch = epoch
            best_metrics = val_metrics
            best_snapshot = {name: t.data.copy() for name, t in named.items()}
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience and epochs_since_best > 0:
                break

    for name, t in named.items():
        t.data = best_snapshot[name]
        t.zero_grad()
    assert best_metrics is not None
    return FoldResult(
        fold=fold, params=params, best_epoch=best_epoch, metrics=best_metrics, history=history
    )


VARIANT_ORDER = (
    "full",
    "wo_frequency",
    "wo_retrieval",
    "wo_contrastive",
    "wo_co_selection",
    "spatial_only",
    "cosine_similarity",
)


def variant_configs(base: TrainConfig) -> dict[str, TrainConfig]:
    """Ablation rows. The full model uses knowledge fusion so that disabling
    retrieval is an observable change; the retrieval-off row falls back to the
    two-segment fusion width."""
    full = replace(
        base,
        frequency=True,
        retrieval=True,
        contrastive=True,
        co_selection=True,
        similarity="fidelity",
        fusion_mode="freq_plus_knowledge",
    )
    return {
        "full": full,
        "wo_frequency": replace(full, frequency=False),
        "wo_retrieval": replace(full, retrieval=False, fusion_mode="freq_only"),
        "wo_contrastive": replace(full, contrastive=False),
        "wo_co_selection": replace(full, co_selection=False),
        "spatial_only": replace(
            full,
            frequency=False,
            retrieval=False,
            fusion_mode="freq_only",
            contrastive=False,
            co_selection=False,
        ),
        "cosine_similarity": replace(full, similarity="cosine"),
    }


def run_ablation_suite(
    manifest: DatasetManifest,
    samples: list[Sample],
    kb: KnowledgeBase | None,
    config: TrainConfig,
    folds_to_run: list[int] | None = None,
) -> dict[str, list[FoldResult]]:
    """Train every ablation variant under identical seeds and fold assignment."""
    fold_ids = make_folds(samples, k=config.folds, seed=config.seed)
    if folds_to_run is None:
        folds_to_run = list(range(config.folds))
    results: dict[str, list[FoldResult]] = {}
    for name in VARIANT_ORDER:
        variant_config = variant_configs(config)[name]
        results[name] = [
            train_fold(manifest, samples, kb, variant_config, fold_ids, fold)
            for fold in folds_to_run
        ]
    return results


def metrics_csv_text(rows: list[tuple[str, int, MetricsReport]]) -> str:
    lines = ["variant,fold,accuracy,f1,precision,recall,auc"]
    for variant, fold, m in rows:
        lines.append(
            f"{variant},{fold},{m.accuracy!r},{m.f1!r},{m.precision!r},{m.recall!r},{m.auc!r}"
        )
    return "\n".join(lines) + "\n"


def write_metrics_csv(path: str, rows: list[tuple[str, int, MetricsReport]]) -> None:
    atomic_write_text(path, metrics_csv_text(rows))


def summarize(per_fold: list[MetricsReport]) -> dict:
    """Mean and population std (ddof 0) of each metric over folds."""
    out = {}
    for key in ("accuracy", "f1", "precision", "recall", "auc"):
        values = np.asarray([getattr(m, key) for m in per_fold])
        out[key] = {"mean": float(values.mean()), "std": float(values.std())}
    return out
