"""Central finite-difference verification of every differentiable operation.

Each suite builds a scalar loss from named leaf tensors, runs the tape
backward, then re-evaluates the forward twice per coordinate at +-h. The
reported figure is the vector relative error ||analytic - numeric|| /
max(||analytic||, ||numeric||, 1e-6) per leaf, worst leaf reported.

Builders must be deterministic: anything random inside the forward (dropout
masks, augmentation noise) re-seeds from a fixed stream on every call.
Retrieval is excluded on purpose: it is defined as a non-differentiated
lookup, so finite differences would sense the softmax weights while the tape
correctly reports nothing.
"""

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import DatasetManifest
from .errors import DimensionError
from .fusion import co_select, filter_compress, init_fusion_params, spectral_stage
from .kernel import GradTape, Tensor, dft_magnitude
from .kernel import ops
from .losses import cross_entropy, info_nce, total_loss, augment
from .model import classify, forward_batch, fuse, init_classifier_params, init_model_params
from .rng import named_stream

TOLERANCE = 1e-4
STEP = 1e-4


def finite_difference_check(
    build: Callable[[GradTape | None], Tensor],
    leaves: dict[str, Tensor],
    h: float = STEP,
) -> float:
    """Worst relative error over the given leaves; build must return a scalar."""
    tape = GradTape()
    for t in leaves.values():
        t.zero_grad()
    out = build(tape)
    if out.data.size != 1:
        raise DimensionError(f"gradcheck target must be scalar, got shape {out.shape}")
    tape.backward(out)
    worst = 0.0
    for t in leaves.values():
        analytic = t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(build(None).data)
            flat[i] = orig - h
            f_minus = float(build(None).data)
            flat[i] = orig
            nflat[i] = (f_plus - f_minus) / (2.0 * h)
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-6)
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / denom))
    return worst


def _scalar(x: Tensor, tape: GradTape | None) -> Tensor:
    while x.data.ndim > 0:
        x = ops.mean_pool(x, axis=-1, tape=tape)
    return x


def _weighted_scalar(x: Tensor, rng: np.random.Generator, tape: GradTape | None) -> Tensor:
    # random fixed weights stop symmetric outputs (softmax rows) from
    # collapsing to a constant under plain averaging
    w = Tensor(rng.standard_normal(x.data.shape))
    return _scalar(ops.mul(x, w, tape), tape)


def _suite_matvec(seed: int) -> float:
    rng = named_stream(seed, "gc-matvec")
    w = Tensor(rng.standard_normal((3, 4)))
    x = Tensor(rng.standard_normal(4))
    b = Tensor(rng.standard_normal(3))
    return finite_difference_check(
        lambda tape: _scalar(ops.matvec(w, x, b, tape), tape), {"w": w, "x": x, "b": b}
    )


def _suite_projection(seed: int) -> float:
    rng = named_stream(seed, "gc-proj")
    x = Tensor(rng.standard_normal((3, 6)))
    w = Tensor(rng.standard_normal((4, 6)))
    b = Tensor(rng.standard_normal(4))
    return finite_difference_check(
        lambda tape: _weighted_scalar(ops.linear(x, w, b, tape), named_stream(seed, "gc-proj-w"), tape),
        {"x": x, "w": w, "b": b},
    )


def _suite_matmul_nt(seed: int) -> float:
    rng = named_stream(seed, "gc-mm")
    a = Tensor(rng.standard_normal((3, 5)))
    b = Tensor(rng.standard_normal((4, 5)))
    return finite_difference_check(
        lambda tape: _weighted_scalar(ops.matmul_nt(a, b, tape), named_stream(seed, "gc-mm-w"), tape),
        {"a": a, "b": b},
    )


def _suite_dft_magnitude(seed: int) -> float:
    rng = named_stream(seed, "gc-dft")
    x = Tensor(rng.standard_normal((3, 8)))
    return finite_difference_check(
        lambda tape: _weighted_scalar(dft_magnitude(x, tape), named_stream(seed, "gc-dft-w"), tape),
        {"x": x},
    )


def _suite_filter_bank(seed: int) -> float:
    rng = named_stream(seed, "gc-filter")
    spectrum = Tensor(np.abs(rng.standard_normal((3, 8))) + 0.1)
    w = Tensor(rng.standard_normal((4, 8)))
    b = Tensor(rng.standard_normal(4))
    return finite_difference_check(
        lambda tape: _weighted_scalar(
            filter_compress(spectrum, w, b, tape), named_stream(seed, "gc-filter-w"), tape
        ),
        {"spectrum": spectrum, "w": w, "b": b},
    )


def _suite_gates(seed: int) -> float:
    rng = named_stream(seed, "gc-gates")
    params = init_fusion_params(8, k=4, rng=rng)
    t_freq = Tensor(np.abs(rng.standard_normal((3, 8))) + 0.1)
    v_freq = Tensor(np.abs(rng.standard_normal((3, 8))) + 0.1)

    def build(tape):
        t_comp = filter_compress(t_freq, params.w_filter_text, params.b_filter_text, tape)
        v_comp = filter_compress(v_freq, params.w_filter_image, params.b_filter_image, tape)
        t_enh, v_enh = co_select(t_freq, v_freq, t_comp, v_comp, params, tape)
        return _weighted_scalar(ops.concat([t_enh, v_enh], tape), named_stream(seed, "gc-gates-w"), tape)

    leaves = {"t_freq": t_freq, "v_freq": v_freq}
    leaves.update(params.named())
    return finite_difference_check(build, leaves)


def _suite_fusion_stage(seed: int) -> float:
    rng = named_stream(seed, "gc-stage")
    params = init_fusion_params(8, k=4, rng=rng)
    t = Tensor(rng.standard_normal((2, 8)))
    v = Tensor(rng.standard_normal((2, 8)))

    def build(tape):
        feats = spectral_stage(t, v, params, tape)
        both = ops.concat([feats.t_enhanced, feats.v_enhanced], tape)
        return _weighted_scalar(both, named_stream(seed, "gc-stage-w"), tape)

    leaves = {"t": t, "v": v}
    leaves.update(params.named())
    return finite_difference_check(build, leaves)


def _suite_layernorm(seed: int) -> float:
    rng = named_stream(seed, "gc-ln")
    x = Tensor(rng.standard_normal((3, 8)))
    gain = Tensor(1.0 + 0.1 * rng.standard_normal(8))
    shift = Tensor(0.1 * rng.standard_normal(8))
    return finite_difference_check(
        lambda tape: _weighted_scalar(
            ops.layernorm(x, gain, shift, tape), named_stream(seed, "gc-ln-w"), tape
        ),
        {"x": x, "gain": gain, "shift": shift},
    )


def _suite_gelu(seed: int) -> float:
    rng = named_stream(seed, "gc-gelu")
    x = Tensor(rng.standard_normal((3, 8)))
    return finite_difference_check(
        lambda tape: _weighted_scalar(ops.gelu(x, tape), named_stream(seed, "gc-gelu-w"), tape),
        {"x": x},
    )


def _suite_sigmoid(seed: int) -> float:
    rng = named_stream(seed, "gc-sig")
    x = Tensor(rng.standard_normal((3, 8)))
    return finite_difference_check(
        lambda tape: _weighted_scalar(ops.sigmoid(x, tape), named_stream(seed, "gc-sig-w"), tape),
        {"x": x},
    )


def _suite_softmax(seed: int) -> float:
    rng = named_stream(seed, "gc-soft")
    x = Tensor(rng.standard_normal((3, 6)))
    return finite_difference_check(
        lambda tape: _weighted_scalar(ops.softmax(x, tape), named_stream(seed, "gc-soft-w"), tape),
        {"x": x},
    )


def _suite_dropout(seed: int) -> float:
    rng = named_stream(seed, "gc-drop")
    x = Tensor(rng.standard_normal((3, 8)))
    return finite_difference_check(
        lambda tape: _scalar(
            ops.dropout(x, 0.25, named_stream(seed, "gc-drop-mask"), True, tape), tape
        ),
        {"x": x},
    )


def _suite_mean_mul_norms(seed: int) -> float:
    rng = named_stream(seed, "gc-misc")
    x = Tensor(rng.standard_normal((3, 5)))
    g = Tensor(rng.standard_normal((3, 1)))

    def build(tape):
        normed = ops.rownorm(x, tape)
        scaled = ops.mul(normed, g, tape)
        summed = ops.add(scaled, ops.scale(x, 0.5, tape), tape)
        boosted = ops.mul(summed, ops.row_norms(x, tape), tape)
        return _weighted_scalar(boosted, named_stream(seed, "gc-misc-w"), tape)

    return finite_difference_check(build, {"x": x, "g": g})


def _suite_mlp_classifier(seed: int) -> float:
    rng = named_stream(seed, "gc-mlp")
    params = init_classifier_params(6, 3, hidden1=5, hidden2=4, dropout=0.15, rng=rng)
    z = Tensor(rng.standard_normal((3, 6)))
    labels = np.array([0, 2, 1])

    def build(tape):
        logits = classify(z, params, train=True, rng=named_stream(seed, "gc-mlp-drop"), tape=tape)
        return cross_entropy(logits, labels, tape)

    leaves = {"z": z}
    leaves.update(params.named())
    return finite_difference_check(build, leaves)


def _suite_cross_entropy(seed: int) -> float:
    rng = named_stream(seed, "gc-ce")
    logits = Tensor(rng.standard_normal((3, 4)))
    labels = np.array([1, 0, 3])
    return finite_difference_check(
        lambda tape: cross_entropy(logits, labels, tape), {"logits": logits}
    )


def _suite_info_nce(seed: int) -> float:
    rng = named_stream(seed, "gc-nce")
    x = Tensor(rng.standard_normal((3, 5)))
    y = Tensor(rng.standard_normal((3, 5)))
    return finite_difference_check(
        lambda tape: info_nce(x, y, 0.07, tape), {"x": x, "y": y}
    )


def _suite_full_pipeline(seed: int) -> float:
    """Projection -> fusion -> classifier -> CE plus contrastive terms.

    Runs in freq_only mode: retrieval is detached by design, so a pipeline
    with knowledge fusion would correctly disagree with finite differences.
    """
    manifest = DatasetManifest(n_classes=3, d_model=8, feature_layout="precomputed")
    params = init_model_params(
        manifest, fusion_mode="freq_only", hidden1=6, hidden2=5, dropout=0.1, seed=seed
    )
    rng = named_stream(seed, "gc-pipe")
    questions = rng.standard_normal((3, 300))
    images = rng.standard_normal((3, 8))
    labels = np.array([0, 1, 2])

    def build(tape):
        fwd = forward_batch(
            params,
            questions,
            images,
            None,
            train=True,
            rng=named_stream(seed, "gc-pipe-drop"),
            tape=tape,
        )
        ce = cross_entropy(fwd.logits, labels, tape)
        aug_rng = named_stream(seed, "gc-pipe-aug")
        t_aug = augment(fwd.t, 0.1, aug_rng, tape)
        intra_t = info_nce(fwd.t, t_aug, 0.07, tape)
        intra_v = Tensor(0.0)
        cross = info_nce(fwd.t, fwd.v, 0.05, tape)
        total, _ = total_loss(ce, intra_t, intra_v, cross, tape)
        return total

    named = params.named()
    leaves = {
        name: named[name]
        for name in (
            "proj.b_t",
            "fusion.w_filter_text",
            "fusion.w_gate_text",
            "fusion.b_gate_image",
            "cls.w2",
            "cls.ln1_gain",
            "cls.w3",
            "cls.b3",
        )
    }
    return finite_difference_check(build, leaves)


@dataclass
class SuiteResult:
    name: str
    error: float
    passed: bool
    seconds: float


ALL_SUITES: list[tuple[str, Callable[[int], float]]] = [
    ("matvec", _suite_matvec),
    ("projection", _suite_projection),
    ("matmul_nt", _suite_matmul_nt),
    ("dft_magnitude", _suite_dft_magnitude),
    ("filter_bank", _suite_filter_bank),
    ("co_select_gates", _suite_gates),
    ("fusion_stage", _suite_fusion_stage),
    ("layernorm", _suite_layernorm),
    ("gelu", _suite_gelu),
    ("sigmoid", _suite_sigmoid),
    ("softmax", _suite_softmax),
    ("dropout", _suite_dropout),
    ("norm_pool_arith", _suite_mean_mul_norms),
    ("mlp_classifier", _suite_mlp_classifier),
    ("cross_entropy", _suite_cross_entropy),
    ("info_nce", _suite_info_nce),
    ("full_pipeline", _suite_full_pipeline),
]


def run_all(seed: int = 0, tolerance: float = TOLERANCE) -> list[SuiteResult]:
    results = []
    for name, fn in ALL_SUITES:
        start = time.perf_counter()
        err = fn(seed)
        results.append(
            SuiteResult(
                name=name,
                error=err,
                passed=err <= tolerance,
                seconds=time.perf_counter() - start,
            )
        )
    return results
