"""Retrieval over a knowledge base scored by state fidelity.

Feature vectors are normalized to unit vectors (pure states); a pure state's
density matrix is its rank-1 outer product. Fidelity between two density
matrices is (Tr sqrt(sqrt(rho_q) rho_k sqrt(rho_q)))^2, which for two pure
states collapses to the squared inner product of the unit vectors. Retrieval
uses the pure-state form; the general eigendecomposition path exists so the
two can be checked against each other.

Retrieval is a non-differentiated lookup: similarities are computed from
plain arrays and no gradient flows into the knowledge base or through the
top-K selection.
"""

from dataclasses import dataclass, field

import numpy as np

from .data import KnowledgeEntry
from .errors import ConfigError, ContractError, DataError, DegenerateInputError, RetrievalError
from .kernel import hermitian_eig, psd_sqrt

TOP_K = 3
SOFTMAX_TAU = 0.1
NORM_EPS = 1e-12


@dataclass
class QuantumState:
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.float64)
        norm = np.linalg.norm(self.amplitudes)
        if abs(norm - 1.0) > 1e-10:
            raise ContractError(f"state norm {norm} is not 1 within 1e-10")


@dataclass
class DensityMatrix:
    rho: np.ndarray
    # set when the matrix is a known rank-1 outer product, enabling the fast path
    state: QuantumState | None = field(default=None)

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if self.rho.ndim != 2 or self.rho.shape[0] != self.rho.shape[1]:
            raise ContractError(f"density matrix must be square, got {self.rho.shape}")
        if not np.allclose(self.rho, self.rho.T, atol=1e-9):
            raise ContractError("density matrix must be symmetric")
        tr = float(np.trace(self.rho))
        if abs(tr - 1.0) > 1e-9:
            raise ContractError(f"density matrix trace {tr} is not 1 within 1e-9")


def normalize_to_state(x: np.ndarray) -> QuantumState:
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x)
    if norm <= NORM_EPS:
        raise DegenerateInputError("cannot normalize a (near-)zero vector to a state")
    return QuantumState(x / norm)


def density(state: QuantumState) -> DensityMatrix:
    psi = state.amplitudes
    return DensityMatrix(np.outer(psi, psi), state=state)


def fidelity(rho_q: DensityMatrix, rho_k: DensityMatrix) -> float:
    """Fidelity in [0, 1]; rank-1 inputs take the inner-product fast path."""
    if rho_q.state is not None and rho_k.state is not None:
        overlap = float(rho_q.state.amplitudes @ rho_k.state.amplitudes)
        return float(np.clip(overlap * overlap, 0.0, 1.0))
    sq = psd_sqrt(rho_q.rho)
    inner = sq @ rho_k.rho @ sq
    root = psd_sqrt(0.5 * (inner + inner.T))
    value = float(np.trace(root)) ** 2
    return float(np.clip(value, 0.0, 1.0))


def fidelity_general(rho_q: DensityMatrix, rho_k: DensityMatrix) -> float:
    """Eigendecomposition path regardless of rank; verification oracle."""
    return fidelity(DensityMatrix(rho_q.rho), DensityMatrix(rho_k.rho))


def form_query(t_enhanced: np.ndarray, v_enhanced: np.ndarray) -> np.ndarray:
    t = np.asarray(t_enhanced, dtype=np.float64)
    v = np.asarray(v_enhanced, dtype=np.float64)
    if t.shape != v.shape:
        raise ContractError(f"query halves disagree: {t.shape} vs {v.shape}")
    return 0.5 * (t + v)


class KnowledgeBase:
    """Immutable entry store with unit-normalized rows precomputed for scoring."""

    def __init__(self, entries: list[KnowledgeEntry]):
        if not entries:
            raise RetrievalError("knowledge base is empty")
        self.entries = list(entries)
        dims = {e.embedding.shape for e in self.entries}
        if len(dims) != 1 or self.entries[0].embedding.ndim != 1:
            raise DataError(f"inconsistent embedding shapes: {sorted(dims)}")
        self.embeddings = np.stack([e.embedding for e in self.entries])
        norms = np.linalg.norm(self.embeddings, axis=1)
        if np.any(norms <= NORM_EPS):
            bad = self.entries[int(np.argmin(norms))].entry_id
            raise DataError(f"knowledge entry {bad!r} has zero-norm embedding")
        self.unit = self.embeddings / norms[:, None]

    def __len__(self):
        return len(self.entries)

    @property
    def d_model(self) -> int:
        return self.embeddings.shape[1]


@dataclass
class RetrievalResult:
    entries: list[KnowledgeEntry]
    similarities: np.ndarray  # descending
    weights: np.ndarray  # softmax over the retrieved K, sums to 1
    k_agg: np.ndarray
    indices: np.ndarray


def _similarities(qn: np.ndarray, kb: KnowledgeBase, similarity: str) -> np.ndarray:
    cos = qn @ kb.unit.T
    if similarity == "fidelity":
        return cos * cos
    if similarity == "cosine":
        return cos
    raise ConfigError(f"unknown similarity {similarity!r}")


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def retrieve(
    q: np.ndarray,
    kb: KnowledgeBase,
    k: int = TOP_K,
    tau: float = SOFTMAX_TAU,
    similarity: str = "fidelity",
) -> RetrievalResult:
    if k < 1 or k > len(kb):
        raise ConfigError(f"k={k} outside [1, {len(kb)}]")
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    qn = normalize_to_state(np.asarray(q, dtype=np.float64)).amplitudes
    sims = _similarities(qn, kb, similarity)
    # stable sort on the negated scores keeps ties in entry order
    order = np.argsort(-sims, kind="stable")[:k]
    top = sims[order]
    weights = _softmax(top / tau)
    k_agg = weights @ kb.embeddings[order]
    return RetrievalResult(
        entries=[kb.entries[i] for i in order],
        similarities=top,
        weights=weights,
        k_agg=k_agg,
        indices=order,
    )


def retrieve_batch(
    queries: np.ndarray,
    kb: KnowledgeBase,
    k: int = TOP_K,
    tau: float = SOFTMAX_TAU,
    similarity: str = "fidelity",
) -> np.ndarray:
    """Aggregated knowledge vectors for a batch of queries, shape (B, d_model)."""
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2:
        raise ContractError(f"expected (B, d) queries, got {queries.shape}")
    if k < 1 or k > len(kb):
        raise ConfigError(f"k={k} outside [1, {len(kb)}]")
    norms = np.linalg.norm(queries, axis=1)
    if np.any(norms <= NORM_EPS):
        raise DegenerateInputError("batch contains a (near-)zero query vector")
    sims = _similarities(queries / norms[:, None], kb, similarity)
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    top = np.take_along_axis(sims, order, axis=1)
    weights = _softmax(top / tau)
    return np.einsum("bk,bkd->bd", weights, kb.embeddings[order])
