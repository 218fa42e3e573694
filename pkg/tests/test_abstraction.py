"""Symbolic model construction, lazy updates, simulation-relation checking,
serialization."""

import os

import numpy as np
import pytest

from safeabs.abstraction import (
    FiniteSystem,
    UpdateLog,
    build_full,
    check_asr_finite,
    finite_system_of,
    interval_to_box,
    lazy_update,
    load_model,
    save_model,
    slack_vector,
    successor_interval,
)
from safeabs.errors import FormatError
from safeabs.explore import _Setup
from safeabs.gp import IntervalCache
from safeabs.bench import toy1d_config, toy2d_config


def _toy_setup(dim=1):
    cfg = toy1d_config(seed=0) if dim == 1 else toy2d_config(seed=0)
    return _Setup(cfg)


def _batch0_model(setup):
    cache = IntervalCache(setup.state_lattice, setup.global_bounds)
    model, log = build_full(
        setup.plant, setup.state_lattice, setup.input_lattice, setup.safe_states,
        cache, setup.config.eps, setup.cont, setup.initial_flat, batch=0,
        var_now=np.full((setup.state_lattice.size, setup.plant.state_dim),
                        setup.kernel.prior_var),
    )
    return model, log, cache


class TestIntervalArithmetic:
    def test_slack_vector_components(self):
        got = slack_vector([2.0, 1.0], [0.5, 0.0], eta_x=0.5)
        r = 0.25
        np.testing.assert_allclose(
            got, [2.0 * r + 0.5 * np.sqrt(r) + r, 1.0 * r + r]
        )

    def test_successor_interval_symmetric_inflation(self):
        lo, hi = successor_interval(
            np.array([1.0]), np.array([-0.1]), np.array([0.2]),
            sigma_v=np.array([0.05]), slack=np.array([0.3]),
        )
        assert lo[0] == pytest.approx(1.0 - 0.1 - 0.05 - 0.3)
        assert hi[0] == pytest.approx(1.0 + 0.2 + 0.05 + 0.3)

    def test_successor_interval_envelope_clip(self):
        lo, hi = successor_interval(
            np.array([5.0, 5.0]), np.zeros(2), np.zeros(2),
            sigma_v=np.zeros(2), slack=np.array([3.0, 3.0]),
            envelope=((4.0, 6.0), None),
        )
        assert (lo[0], hi[0]) == (4.0, 6.0)
        assert (lo[1], hi[1]) == (2.0, 8.0)

    def test_interval_to_box_snap(self):
        lo, hi = interval_to_box(np.array([0.2 * 3]), np.array([0.2 * 7]), 0.2)
        assert (lo[0], hi[0]) == (3, 7)
        lo, hi = interval_to_box(np.array([0.61]), np.array([0.59]), 0.2)
        assert lo[0] > hi[0]  # empty interval quantizes to an empty box


class TestBuildFull:
    def test_enabled_boxes_stay_safe_and_in_range(self):
        setup = _toy_setup(2)
        model, _, _ = _batch0_model(setup)
        lat = model.state_lattice
        s, u = np.nonzero(model.enabled)
        assert len(s) > 0
        for flat, j in zip(s[:200], u[:200]):
            box = model.box(int(flat), int(j))
            assert not box.is_empty
            members = box.member_flats(lat)
            assert np.all(model.safe.mask[members])

    def test_boxes_cover_true_successors(self):
        # Soundness oracle: simulate real noisy steps from random points in
        # each abstract cell and check the successor lands inside the box.
        setup = _toy_setup(1)
        model, _, _ = _batch0_model(setup)
        lat = model.state_lattice
        rng = np.random.default_rng(7)
        s, u = np.nonzero(model.enabled)
        pick = rng.choice(len(s), size=min(300, len(s)), replace=False)
        for k in pick:
            flat, j = int(s[k]), int(u[k])
            x_rep = lat.idx_of_flat(flat) * lat.eta
            x = x_rep + rng.uniform(-lat.eta / 2, lat.eta / 2, size=lat.dim)
            u_val = setup.input_lattice.idx_of_flat(j) * setup.input_lattice.eta
            x_next = setup.plant.step(x, np.atleast_1d(u_val), rng)
            box = model.box(flat, j)
            assert box.contains_idx(lat.nearest(x_next))

    def test_transition_count_and_disabled_rows(self):
        setup = _toy_setup(1)
        model, _, _ = _batch0_model(setup)
        assert model.n_transitions() == int(np.count_nonzero(model.enabled))
        unsafe = np.flatnonzero(~model.safe.mask)
        assert not np.any(model.enabled[unsafe])


class TestLazyUpdate:
    def _refined(self, setup, cache, shrink=0.5):
        flats = setup.safe_states.flats()
        lo = cache.r_lo[flats] * shrink
        hi = cache.r_hi[flats] * shrink
        cache.refine(flats, lo, hi)

    def test_zero_threshold_matches_full_rebuild(self):
        setup = _toy_setup(1)
        model0, log0, cache = _batch0_model(setup)
        self._refined(setup, cache)
        var1 = np.zeros((setup.state_lattice.size, 1))
        lazy, _, n_recomputed = lazy_update(
            setup.plant, model0, log0, cache, var1, rho=0.0, batch=1,
            cont_constants=setup.cont,
        )
        full, _ = build_full(
            setup.plant, setup.state_lattice, setup.input_lattice,
            setup.safe_states, cache, setup.config.eps, setup.cont,
            setup.initial_flat, batch=1,
        )
        assert n_recomputed == len(setup.safe_states)
        np.testing.assert_array_equal(lazy.enabled, full.enabled)
        np.testing.assert_array_equal(lazy.box_lo, full.box_lo)
        np.testing.assert_array_equal(lazy.box_hi, full.box_hi)

    def test_huge_threshold_keeps_stale_transitions(self):
        setup = _toy_setup(1)
        model0, log0, cache = _batch0_model(setup)
        self._refined(setup, cache)
        var1 = np.zeros((setup.state_lattice.size, 1))
        lazy, log1, n_recomputed = lazy_update(
            setup.plant, model0, log0, cache, var1, rho=1e9, batch=1,
            cont_constants=setup.cont,
        )
        assert n_recomputed == 0
        np.testing.assert_array_equal(lazy.box_lo, model0.box_lo)
        np.testing.assert_array_equal(log1.last_batch, log0.last_batch)


class TestAsrCheck:
    def _chain(self, succ, points=None, n_inputs=1):
        pts = np.asarray(points if points is not None else [[0.0], [1.0]])
        return FiniteSystem(pts, 0, n_inputs, succ)

    def test_identity_relation_passes(self):
        sys_a = self._chain({(0, 0): np.array([1]), (1, 0): np.array([1])})
        ok, cex = check_asr_finite(sys_a, sys_a, eps=0.0, pairs=[(0, 0), (1, 1)])
        assert ok and cex is None

    def test_initial_pair_missing(self):
        sys_a = self._chain({(0, 0): np.array([1])})
        ok, cex = check_asr_finite(sys_a, sys_a, eps=0.0, pairs=[(1, 1)])
        assert not ok and cex["condition"] == "initial"

    def test_distance_violation(self):
        a = self._chain({}, points=[[0.0], [1.0]])
        b = self._chain({}, points=[[0.0], [5.0]])
        ok, cex = check_asr_finite(a, b, eps=0.5, pairs=[(0, 0), (1, 1)])
        assert not ok and cex["condition"] == "distance"

    def test_unmatchable_successor(self):
        # Abstract can stay at 0; concrete's only move jumps to state 1,
        # which is not related to any abstract successor.
        a = self._chain({(0, 0): np.array([0])})
        b = self._chain({(0, 0): np.array([1])})
        ok, cex = check_asr_finite(a, b, eps=0.0, pairs=[(0, 0)])
        assert not ok and cex["condition"] == "successor"

    def test_default_relation_from_metric(self):
        a = self._chain({(0, 0): np.array([0, 1]), (1, 0): np.array([1])})
        ok, _ = check_asr_finite(a, a, eps=0.25)
        assert ok

    def test_finite_system_of_round_trip(self):
        setup = _toy_setup(1)
        model, _, _ = _batch0_model(setup)
        fin = finite_system_of(model)
        assert len(fin.points) == len(model.safe)
        assert fin.n_inputs == model.input_lattice.size
        # Every enumerated transition matches the symbolic box cardinality.
        flats = model.safe.flats()
        for s in range(min(20, len(flats))):
            for u in np.flatnonzero(model.enabled[flats[s]]):
                box = model.box(int(flats[s]), int(u))
                assert len(fin.successors[(s, int(u))]) == box.cardinality


class TestSerialization:
    def test_model_round_trip(self, tmp_path):
        setup = _toy_setup(2)
        model, _, _ = _batch0_model(setup)
        path = os.path.join(tmp_path, "model.bin")
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.state_lattice == model.state_lattice
        assert loaded.input_lattice == model.input_lattice
        assert loaded.eps == model.eps
        assert loaded.batch == model.batch
        assert loaded.initial_flat == model.initial_flat
        np.testing.assert_array_equal(loaded.safe.mask, model.safe.mask)
        np.testing.assert_array_equal(loaded.enabled, model.enabled)
        np.testing.assert_array_equal(loaded.box_lo, model.box_lo)
        np.testing.assert_array_equal(loaded.box_hi, model.box_hi)

    def test_bad_magic_rejected(self, tmp_path):
        path = os.path.join(tmp_path, "junk.bin")
        with open(path, "wb") as fh:
            fh.write(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FormatError):
            load_model(path)

    def test_truncated_file_rejected(self, tmp_path):
        setup = _toy_setup(1)
        model, _, _ = _batch0_model(setup)
        path = os.path.join(tmp_path, "model.bin")
        save_model(model, path)
        data = open(path, "rb").read()
        with open(path, "wb") as fh:
            fh.write(data[: len(data) // 2])
        with pytest.raises(FormatError):
            load_model(path)

    def test_failed_write_leaves_no_partial_file(self, tmp_path):
        setup = _toy_setup(1)
        model, _, _ = _batch0_model(setup)
        target = os.path.join(tmp_path, "sub", "model.bin")
        with pytest.raises(FileNotFoundError):
            save_model(model, target)
        assert not os.path.exists(target)
