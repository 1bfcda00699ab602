import time

import numpy as np
import pytest

from freqfuse.errors import DimensionError
from freqfuse.gradcheck import ALL_SUITES, TOLERANCE, finite_difference_check, run_all
from freqfuse.kernel import GradTape, Tensor
from freqfuse.kernel import ops


def test_all_suites_pass_within_budget():
    start = time.time()
    results = run_all(seed=0)
    elapsed = time.time() - start
    assert len(results) == len(ALL_SUITES)
    for result in results:
        assert result.passed, f"{result.name}: relative error {result.error:.3e}"
        assert result.error <= TOLERANCE
    assert elapsed < 30.0


def test_seed_changes_inputs_not_outcomes():
    a = run_all(seed=1)
    b = run_all(seed=2)
    assert all(r.passed for r in a + b)
    assert any(ra.error != rb.error for ra, rb in zip(a, b))


def test_finite_difference_check_detects_a_wrong_gradient():
    # an op with a deliberately broken adjoint must be flagged
    def broken_scale(x, c, tape):
        out = Tensor(x.data * c)
        if tape is not None:

            def backward():
                if out.grad is not None:
                    x.accumulate_grad(out.grad * (c + 0.5))  # wrong by construction

            tape.record(backward)
        return out

    x = Tensor(np.array([0.3, -0.7, 1.1]))

    def build(tape):
        return ops.mean_pool(broken_scale(x, 2.0, tape), tape=tape)

    error = finite_difference_check(build, {"x": x})
    assert error > TOLERANCE


def test_finite_difference_check_requires_scalar():
    x = Tensor(np.ones(4))

    def build(tape):
        return ops.scale(x, 2.0, tape)

    with pytest.raises(DimensionError):
        finite_difference_check(build, {"x": x})
