"""
Tests for the Adam optimizer
=============================

Tests cover:
- Zero-gradient and first-step closed forms
- Shape validation
- Bitwise determinism over repeated runs
"""

import numpy as np
import pytest

from src.errors import ContractError, DimensionError
from src.numeric import Adam, AdamState, Tensor, adam_step


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def run_quadratic(seed: int, steps: int = 10) -> np.ndarray:
    """Helper: minimise sum((Wx - y)^2) for a few steps from a seeded start."""
    rng = np.random.default_rng(seed)
    w = Tensor(rng.normal(size=(3, 3)), requires_grad=True, name="w")
    x = rng.normal(size=(3, 4))
    y = rng.normal(size=(3, 4))
    opt = Adam([w], lr=1e-2)
    for _ in range(steps):
        opt.zero_grad()
        diff = (w @ x) - y
        (diff * diff).sum().backward()
        opt.step()
    return w.data.copy()


# ---------------------------------------------------------------------------
# adam_step
# ---------------------------------------------------------------------------

class TestAdamStep:
    """Tests for the functional adam_step()."""

    def test_zero_gradient_leaves_params(self):
        """A zero gradient moves nothing."""
        params = {"w": np.array([1.0, -2.0])}
        new, state = adam_step(params, {"w": np.zeros(2)}, AdamState(), lr=0.1)
        np.testing.assert_array_equal(new["w"], params["w"])
        assert state.step == 1

    def test_first_step_magnitude(self):
        """With g=1 on step 1 the bias-corrected update equals lr."""
        lr = 1e-3
        new, _ = adam_step({"w": np.array(0.0)}, {"w": np.array(1.0)}, AdamState(), lr=lr)
        assert abs(-float(new["w"]) - lr / (1.0 + 1e-8)) < 1e-9

    def test_inputs_untouched(self):
        """The pure step does not mutate its arguments."""
        params = {"w": np.ones(3)}
        state = AdamState()
        adam_step(params, {"w": np.ones(3)}, state, lr=0.5)
        np.testing.assert_array_equal(params["w"], np.ones(3))
        assert state.step == 0 and not state.m

    def test_gradient_shape_mismatch(self):
        """A gradient of the wrong shape is a dimension error."""
        with pytest.raises(DimensionError):
            adam_step({"w": np.ones(3)}, {"w": np.ones(2)}, AdamState(), lr=0.1)

    def test_state_shape_mismatch(self):
        """Stale moments of another shape are rejected."""
        state = AdamState(step=1, m={"w": np.zeros(2)}, v={"w": np.zeros(2)})
        with pytest.raises(DimensionError):
            adam_step({"w": np.ones(3)}, {"w": np.ones(3)}, state, lr=0.1)

    def test_missing_gradient(self):
        """Every parameter needs a gradient."""
        with pytest.raises(ContractError):
            adam_step({"w": np.ones(3)}, {}, AdamState(), lr=0.1)


# ---------------------------------------------------------------------------
# Adam wrapper
# ---------------------------------------------------------------------------

class TestAdam:
    """Tests for the stateful Adam wrapper."""

    def test_identical_runs_bitwise(self):
        """Two runs from the same seed end bitwise identical after 10 steps."""
        np.testing.assert_array_equal(run_quadratic(3), run_quadratic(3))

    def test_loss_decreases(self):
        """A few steps reduce a convex objective."""
        rng = np.random.default_rng(0)
        w = Tensor(rng.normal(size=4), requires_grad=True, name="w")
        opt = Adam([w], lr=0.1)
        start = float((w.data ** 2).sum())
        for _ in range(20):
            opt.zero_grad()
            (w * w).sum().backward()
            opt.step()
        assert float((w.data ** 2).sum()) < start

    def test_unnamed_parameters_rejected(self):
        """Parameters need unique names for the moment dictionaries."""
        with pytest.raises(ContractError):
            Adam([Tensor(1.0, requires_grad=True)], lr=0.1)
