"""Shared fixtures and independent oracles used across test modules."""

import cmath

import numpy as np
import pytest


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def naive_dft(x):
    """Textbook O(d^2) transform, written independently of the library path."""
    d = len(x)
    out = np.empty(d, dtype=np.complex128)
    for k in range(d):
        acc = 0j
        for n in range(d):
            acc += complex(x[n]) * cmath.exp(-2j * cmath.pi * k * n / d)
        out[k] = acc
    return out


@pytest.fixture(scope="session")
def acceptance_dataset():
    """The synthetic benchmark pinned by the convergence and ablation checks."""
    from freqfuse.data import generate_synthetic
    from freqfuse.retrieval import KnowledgeBase

    manifest, samples, kb_entries = generate_synthetic(4, 500, 64, 0.3, seed=1)
    return manifest, samples, KnowledgeBase(kb_entries)
