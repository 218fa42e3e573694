"""Ground-truth simulators and benchmark hyperparameter sanity."""

import numpy as np
import pytest

from safeabs.bench import acc_margin_check
from safeabs.errors import OutOfRangeError
from safeabs.gp import global_bound
from safeabs.plant import make_acc_plant, make_toy1d_plant, make_toy2d_plant


class TestAccPlant:
    def setup_method(self):
        self.plant = make_acc_plant()

    def test_nominal_jacobian_rows_match_lipschitz(self):
        # Finite-difference check that lipschitz_f bounds the max-norm of
        # each Jacobian row of f.
        rng = np.random.default_rng(0)
        x = rng.uniform([18, 15, 30], [25, 25, 100], size=(50, 3))
        u = rng.uniform(-1, 1, size=(50, 1))
        h = 1e-6
        for j in range(3):
            dx = np.zeros(3)
            dx[j] = h
            grad = (self.plant.f(x + dx, u) - self.plant.f(x - dx, u)) / (2 * h)
            for i in range(3):
                assert np.all(np.abs(grad[:, i]) <= self.plant.lipschitz_f[i] + 1e-6)

    def test_residual_is_drag_only(self):
        d = self.plant.d_true(np.array([20.0, 20.0, 60.0]))
        assert d[0] < 0 and d[1] < 0  # drag slows both vehicles
        assert d[2] == 0.0  # headway has no residual

    def test_step_consistent_with_model(self):
        rng = np.random.default_rng(1)
        x = np.array([20.0, 20.0, 60.0])
        u = np.array([0.5])
        x_next = self.plant.step(x, u, rng)
        nominal = self.plant.f(x, u) + self.plant.d_true(x)
        assert np.all(np.abs(x_next - nominal) <= self.plant.sigma_v + 1e-12)

    def test_training_sample_recovers_residual(self):
        rng = np.random.default_rng(2)
        x = np.array([20.0, 22.0, 50.0])
        u = np.array([-0.3])
        x_next = self.plant.step(x, u, rng)
        y = self.plant.training_sample(x, x_next, u)
        # y = d(x) + v except where the envelope clipped the successor.
        gap = np.abs(y - self.plant.d_true(x))
        assert np.all(gap[1:] <= self.plant.sigma_v[1:] + 1e-12)

    def test_envelope_clips_lead_speed(self):
        clipped = self.plant.clip_envelope(np.array([30.0, 30.0, 60.0]))
        lo, hi = self.plant.envelope[0]
        assert clipped[0] == hi
        assert clipped[1] == 30.0  # non-envelope dimensions untouched
        rng = np.random.default_rng(3)
        x_next = self.plant.step(np.array([21.0, 20.0, 60.0]), np.array([0.0]), rng)
        assert lo <= x_next[0] <= hi

    def test_input_range_enforced(self):
        rng = np.random.default_rng(4)
        with pytest.raises(OutOfRangeError):
            self.plant.step(np.array([20.0, 20.0, 60.0]), np.array([1.5]), rng)

    def test_margin_check_passes(self):
        assert acc_margin_check()["ok"]


@pytest.mark.parametrize("factory", [make_toy1d_plant, make_toy2d_plant])
class TestToyPlants:
    def test_residual_norm_is_recorded_exactly(self, factory):
        plant = factory()
        norms = np.atleast_1d(plant.rkhs_norm)
        assert np.all(norms > 0)
        # The data-free bound from the recorded norm covers the actual
        # residual everywhere on the operating box.
        rng = np.random.default_rng(5)
        x = rng.uniform(0, 8, size=(500, plant.state_dim))
        d = np.atleast_2d(plant.d_true(x))
        for i in range(plant.state_dim):
            gb = global_bound(plant.d_kernel, norms[min(i, len(norms) - 1)])
            assert np.max(np.abs(d[:, i])) <= gb + 1e-9

    def test_step_batched_and_bounded(self, factory):
        plant = factory()
        rng = np.random.default_rng(6)
        x = rng.uniform(2, 6, size=(10, plant.state_dim))
        u = np.zeros((10, plant.input_dim))
        x_next = plant.f(x, u) + plant.d_true(x)
        assert x_next.shape == x.shape
        stepped = np.stack([plant.step(x[k], u[k], rng) for k in range(10)])
        assert np.all(np.abs(stepped - x_next) <= plant.sigma_v + 1e-12)
