"""Dataset and knowledge-base IO plus the synthetic benchmark generator.

Datasets are JSON Lines. The first line is a header:

    {"meta": {"C": 4, "d_model": 64, "feature_layout": "precomputed"}}

and every following line is one sample:

    {"id": "...", "image_id": "...", "answer_class": 0,
     "image_features": [...],                # 768 floats ("vit") or d_model floats ("precomputed")
     "question_features": [...]}             # 300 floats, OR "question_tokens": [int, ...]

Knowledge bases are JSON Lines with no header; each line is
{"id": "...", "text": "...", "embedding": [d_model floats]}.
"""

import json
import os
import tempfile
import warnings
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .rng import named_stream

TEXT_DIM = 300
VIT_DIM = 768
FEATURE_LAYOUTS = ("vit", "precomputed")
PAD_TOKEN = 0
MAX_TOKENS = 50


@dataclass(frozen=True)
class DatasetManifest:
    n_classes: int
    d_model: int
    feature_layout: str

    def validate(self) -> None:
        if not isinstance(self.n_classes, int) or self.n_classes < 2:
            raise DataError(f"meta.C must be an integer >= 2, got {self.n_classes!r}")
        if not isinstance(self.d_model, int) or self.d_model < 2:
            raise DataError(f"meta.d_model must be an integer >= 2, got {self.d_model!r}")
        if self.feature_layout not in FEATURE_LAYOUTS:
            raise DataError(
                f"meta.feature_layout must be one of {FEATURE_LAYOUTS}, got {self.feature_layout!r}"
            )

    @property
    def image_dim(self) -> int:
        return VIT_DIM if self.feature_layout == "vit" else self.d_model


@dataclass
class Sample:
    sample_id: str
    image_id: str
    answer_class: int
    image_features: np.ndarray
    question_features: np.ndarray | None = None
    question_tokens: list[int] | None = None


@dataclass
class KnowledgeEntry:
    entry_id: str
    text: str
    embedding: np.ndarray


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file in the same directory so readers never see a torn file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _float_list(value, length: int, where: str) -> np.ndarray:
    if not isinstance(value, list) or len(value) != length:
        raise DataError(f"{where}: expected a list of {length} numbers")
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (length,) or not np.all(np.isfinite(arr)):
        raise DataError(f"{where}: expected {length} finite numbers")
    return arr


def _parse_sample(obj: dict, manifest: DatasetManifest, where: str) -> Sample:
    for key in ("id", "image_id", "answer_class", "image_features"):
        if key not in obj:
            raise DataError(f"{where}: missing required key {key!r}")
    sample_id = obj["id"]
    image_id = obj["image_id"]
    if not isinstance(sample_id, str) or not isinstance(image_id, str):
        raise DataError(f"{where}: id and image_id must be strings")
    answer = obj["answer_class"]
    if not isinstance(answer, int) or not (0 <= answer < manifest.n_classes):
        raise DataError(f"{where}: answer_class must be an integer in [0, {manifest.n_classes})")
    image = _float_list(obj["image_features"], manifest.image_dim, f"{where}: image_features")

    has_tokens = "question_tokens" in obj
    has_features = "question_features" in obj
    if has_tokens == has_features:
        raise DataError(f"{where}: exactly one of question_tokens / question_features is required")
    tokens = None
    features = None
    if has_tokens:
        tokens = obj["question_tokens"]
        if (
            not isinstance(tokens, list)
            or not tokens
            or not all(isinstance(t, int) and t >= 0 for t in tokens)
        ):
            raise DataError(f"{where}: question_tokens must be a non-empty list of ints >= 0")
        # canonical length 50: truncate long questions, pad short ones with 0
        tokens = (tokens[:MAX_TOKENS] + [PAD_TOKEN] * MAX_TOKENS)[:MAX_TOKENS]
    else:
        features = _float_list(obj["question_features"], TEXT_DIM, f"{where}: question_features")
    return Sample(
        sample_id=sample_id,
        image_id=image_id,
        answer_class=answer,
        image_features=image,
        question_features=features,
        question_tokens=tokens,
    )


def load_dataset(path: str) -> tuple[DatasetManifest, list[Sample]]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path}: empty file, expected a header line")

    def parse_json(text: str, where: str) -> dict:
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"{where}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise DataError(f"{where}: expected a JSON object")
        return obj

    header = parse_json(lines[0], f"{path} line 1")
    meta = header.get("meta")
    if not isinstance(meta, dict):
        raise DataError(f"{path} line 1: header must be an object with a 'meta' key")
    for key in ("C", "d_model", "feature_layout"):
        if key not in meta:
            raise DataError(f"{path} line 1: meta missing key {key!r}")
    manifest = DatasetManifest(
        n_classes=meta["C"], d_model=meta["d_model"], feature_layout=meta["feature_layout"]
    )
    try:
        manifest.validate()
    except DataError as exc:
        raise DataError(f"{path} line 1: {exc}") from exc

    samples = []
    seen_ids = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        where = f"{path} line {lineno}"
        sample = _parse_sample(parse_json(line, where), manifest, where)
        if sample.sample_id in seen_ids:
            raise DataError(f"{where}: duplicate sample id {sample.sample_id!r}")
        seen_ids.add(sample.sample_id)
        samples.append(sample)
    # a header with no samples is a valid (empty) dataset
    return manifest, samples


def save_dataset(path: str, manifest: DatasetManifest, samples: list[Sample]) -> None:
    manifest.validate()
    rows = [
        json.dumps(
            {
                "meta": {
                    "C": manifest.n_classes,
                    "d_model": manifest.d_model,
                    "feature_layout": manifest.feature_layout,
                }
            }
        )
    ]
    for sample in samples:
        obj = {
            "id": sample.sample_id,
            "image_id": sample.image_id,
            "answer_class": int(sample.answer_class),
            "image_features": [float(v) for v in sample.image_features],
        }
        if sample.question_tokens is not None:
            obj["question_tokens"] = [int(t) for t in sample.question_tokens]
        else:
            obj["question_features"] = [float(v) for v in sample.question_features]
        rows.append(json.dumps(obj))
    atomic_write_text(path, "\n".join(rows) + "\n")


def load_knowledge_base(path: str, d_model: int | None = None) -> list[KnowledgeEntry]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read knowledge base {path}: {exc}") from exc
    entries = []
    dim = d_model
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        where = f"{path} line {lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{where}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise DataError(f"{where}: expected a JSON object")
        for key in ("id", "text", "embedding"):
            if key not in obj:
                raise DataError(f"{where}: missing required key {key!r}")
        if not isinstance(obj["id"], str) or not isinstance(obj["text"], str):
            raise DataError(f"{where}: id and text must be strings")
        raw = obj["embedding"]
        if not isinstance(raw, list) or not raw:
            raise DataError(f"{where}: embedding must be a non-empty list of numbers")
        if dim is None:
            dim = len(raw)
        embedding = _float_list(raw, dim, f"{where}: embedding")
        if np.linalg.norm(embedding) <= 1e-12:
            raise DataError(f"{where}: embedding has zero norm")
        entries.append(KnowledgeEntry(entry_id=obj["id"], text=obj["text"], embedding=embedding))
    if not entries:
        raise DataError(f"{path}: knowledge base is empty")
    return entries


def save_knowledge_base(path: str, entries: list[KnowledgeEntry]) -> None:
    rows = [
        json.dumps(
            {
                "id": entry.entry_id,
                "text": entry.text,
                "embedding": [float(v) for v in entry.embedding],
            }
        )
        for entry in entries
    ]
    atomic_write_text(path, "\n".join(rows) + "\n")


_TOKEN_VECTORS: dict[tuple[int, int], np.ndarray] = {}


def _token_vector(token: int, dim: int) -> np.ndarray:
    key = (token, dim)
    cached = _TOKEN_VECTORS.get(key)
    if cached is None:
        tag = zlib.crc32(f"token-{token}".encode())
        rng = np.random.default_rng([tag, dim])
        cached = rng.standard_normal(dim) / np.sqrt(dim)
        _TOKEN_VECTORS[key] = cached
    return cached


def embed_text_stub(tokens: list[int], dim: int = TEXT_DIM) -> np.ndarray:
    """Deterministic bag-of-tokens embedding: mean of fixed per-token vectors.

    Padding (token 0) is skipped; an all-padding question embeds to zero.
    """
    live = [t for t in tokens if t != PAD_TOKEN]
    if not live:
        warnings.warn("question contains only padding tokens; embedding is zero", stacklevel=2)
        return np.zeros(dim)
    return np.mean([_token_vector(t, dim) for t in live], axis=0)


def question_matrix(samples: list[Sample]) -> np.ndarray:
    rows = []
    for sample in samples:
        if sample.question_features is not None:
            rows.append(sample.question_features)
        else:
            rows.append(embed_text_stub(sample.question_tokens))
    return np.stack(rows)


def image_matrix(samples: list[Sample]) -> np.ndarray:
    return np.stack([s.image_features for s in samples])


def labels_array(samples: list[Sample]) -> np.ndarray:
    return np.asarray([s.answer_class for s in samples], dtype=np.int64)


def class_frequencies(n_classes: int, d_model: int) -> np.ndarray:
    """Distinct spectral bands, one per class, inside (0, d_model/2].

    The Nyquist band d_model/2 is used only when every lower band is taken,
    since a random-phase sinusoid there can have near-zero amplitude.
    """
    if n_classes > d_model // 2 or d_model // 2 < 1:
        raise ConfigError(
            f"cannot place {n_classes} distinct bands in dimension {d_model}; "
            f"need C <= d_model / 2"
        )
    top = d_model // 2 - 1 if n_classes <= d_model // 2 - 1 else d_model // 2
    if n_classes == 1:
        freqs = np.array([1])
    else:
        freqs = np.rint(np.linspace(1, top, n_classes)).astype(int)
    if len(set(freqs.tolist())) != n_classes:
        raise ConfigError(f"class bands collide for C={n_classes}, d_model={d_model}")
    return freqs


SYNTH_AMPLITUDE = 0.25


def generate_synthetic(
    n_classes: int,
    n_per_class: int,
    d_model: int,
    sigma: float,
    seed: int,
    samples_per_image: int = 1,
    amplitude: float = SYNTH_AMPLITUDE,
) -> tuple[DatasetManifest, list[Sample], list[KnowledgeEntry]]:
    """Class-banded sinusoid benchmark.

    Each class owns one spectral band. An image is a sinusoid at its class
    band with a random phase, plus Gaussian noise; the paired question is a
    sinusoid at the same band on a 300-point grid. Random phase keeps raw
    coordinates uninformative for a linear probe while the magnitude spectrum
    stays cleanly separable; the amplitude is kept below the noise scale so
    that recovering the band from raw coordinates is slow for any learner
    while the spectral spike at the band stays prominent. The knowledge base
    holds the clean phase-zero class sinusoid as one prototype per class,
    plus one random distractor per class.
    """
    if n_per_class < 1 or samples_per_image < 1:
        raise ConfigError("n_per_class and samples_per_image must be >= 1")
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    if amplitude <= 0:
        raise ConfigError(f"amplitude must be positive, got {amplitude}")
    freqs = class_frequencies(n_classes, d_model)
    manifest = DatasetManifest(n_classes=n_classes, d_model=d_model, feature_layout="precomputed")

    rng = named_stream(seed, "synthetic")
    grid = np.arange(d_model)
    text_grid = np.arange(TEXT_DIM)
    samples: list[Sample] = []
    n_images = n_per_class  # per class; each image yields samples_per_image samples
    order = 0
    for img_index in range(n_images):
        for cls in range(n_classes):
            freq = freqs[cls]
            image_id = f"img-{cls}-{img_index:05d}"
            phase = rng.uniform(0.0, 2.0 * np.pi)
            image = amplitude * np.cos(2.0 * np.pi * freq * grid / d_model + phase)
            image = image + sigma * rng.standard_normal(d_model)
            for rep in range(samples_per_image):
                text_phase = rng.uniform(0.0, 2.0 * np.pi)
                question = amplitude * np.cos(2.0 * np.pi * freq * text_grid / TEXT_DIM + text_phase)
                question = question + sigma * rng.standard_normal(TEXT_DIM)
                samples.append(
                    Sample(
                        sample_id=f"s-{order:06d}",
                        image_id=image_id,
                        answer_class=cls,
                        image_features=image,
                        question_features=question,
                    )
                )
                order += 1

    kb_rng = named_stream(seed, "synthetic-kb")
    entries: list[KnowledgeEntry] = []
    for cls in range(n_classes):
        freq = freqs[cls]
        angle = 2.0 * np.pi * freq * grid / d_model
        entries.append(
            KnowledgeEntry(
                entry_id=f"kb-proto-{cls}",
                text=f"band {freq} prototype",
                embedding=np.cos(angle),
            )
        )
    for j in range(n_classes):
        entries.append(
            KnowledgeEntry(
                entry_id=f"kb-noise-{j}",
                text=f"distractor {j}",
                embedding=kb_rng.standard_normal(d_model) / np.sqrt(d_model),
            )
        )
    return manifest, samples, entries
