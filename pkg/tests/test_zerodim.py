"""Scalar toy system: closed-form solves against the exhaustive oracle."""

import numpy as np
import pytest

import amfrac as af
from amfrac.diagnostics import check_trace_invariants, complementarity_check
from amfrac.zerodim import (
    ZeroDimModel,
    brute_force_z_step,
    run_zero_dim,
    z_step,
)


class TestZStep:
    def test_no_displacement_keeps_z(self):
        zm = ZeroDimModel()  # kappa_R > kappa_E * z_prev: no decrease
        z, mu, lam = z_step(0.0, 0.0, 0.8, 0.1, zm)
        assert z == pytest.approx(0.8)
        assert mu == 0.0
        oracle = brute_force_z_step(0.0, 0.0, 0.8, 0.1, zm)
        assert abs(z - oracle) <= 2e-4

    def test_zero_radius_is_singleton(self):
        zm = ZeroDimModel()
        z, _, _ = z_step(0.3, 2.0, 0.7, 0.0, zm)
        assert z == pytest.approx(0.7)
        assert brute_force_z_step(0.3, 2.0, 0.7, 0.0, zm) == pytest.approx(0.7)

    def test_saturated_ball_without_restoring_terms(self):
        zm = ZeroDimModel(kappa_E=1e-12, kappa_R=0.0)
        z, mu, _ = z_step(0.0, 10.0, 0.9, 0.2, zm)
        assert z == pytest.approx(max(0.0, 0.9 - 0.2))
        assert mu > 0.0  # ball multiplier pushes from below
        z2, _, _ = z_step(0.0, 10.0, 0.1, 0.5, zm)
        assert z2 == pytest.approx(0.0, abs=1e-12)

    def test_oracle_equivalence_random(self):
        zm = ZeroDimModel()
        rng = np.random.default_rng(42)
        grid_step = 1e-4
        for _ in range(200):
            t = rng.uniform(0.0, 1.0)
            u = rng.uniform(0.0, 3.0)
            z_prev = rng.uniform(0.0, 1.0)
            rho = rng.uniform(1e-3, 0.5)
            z, _, _ = z_step(t, u, z_prev, rho, zm)
            oracle = brute_force_z_step(t, u, z_prev, rho, zm, grid_step)
            assert abs(z - oracle) <= 2 * grid_step

    def test_grid_step_validation(self):
        with pytest.raises(ValueError):
            brute_force_z_step(0.0, 1.0, 0.5, 0.1, ZeroDimModel(), 0.0)


class TestRunZeroDim:
    def test_full_traces_match_oracle(self):
        zm = ZeroDimModel()
        for rho, T in ((0.05, 1.0), (0.02, 1.0), (0.01, 0.8)):
            params = af.SchemeParams(rho=rho, T=T,
                                     norm_V=af.NormSpec("lalpha", 2.0),
                                     store_all_snapshots=True)
            trace = run_zero_dim(zm, params, check_oracle=True)
            assert trace.records[-1].t == T

    def test_jump_block_exists(self, zerodim_trace):
        # the load ramp is tuned so the damage field collapses mid-run
        _, params, trace = zerodim_trace
        dts = [r.dt for r in trace.records[1:]]
        best = cur = 0
        for d in dts:
            cur = cur + 1 if d <= 1e-12 else 0
            best = max(best, cur)
        assert best >= 5

    def test_structural_invariants(self, zerodim_trace):
        _, _, trace = zerodim_trace
        assert check_trace_invariants(trace).ok()
        assert complementarity_check(trace) == []

    def test_evolution_monotone(self, zerodim_trace):
        _, _, trace = zerodim_trace
        zs = [trace.snapshot(k)[1][0] for k in range(trace.n_steps + 1)]
        assert all(b <= a + 1e-12 for a, b in zip(zs[:-1], zs[1:]))
        assert 0.0 <= min(zs) and max(zs) <= 1.0

    def test_adaptive_throttling_near_onset(self):
        """Qualitative jump-onset pattern for two radii: the increment
        series drops from full steps to (near) zero through partial steps,
        and the onset region shows non-monotone increments."""
        zm = ZeroDimModel()
        for rho in (0.02, 0.002):
            params = af.SchemeParams(rho=rho, T=1.0,
                                     norm_V=af.NormSpec("lalpha", 2.0),
                                     store_all_snapshots=True)
            trace = run_zero_dim(zm, params)
            dts = np.array([r.dt for r in trace.records])
            jump = np.where(dts[1:] <= 1e-12)[0]
            assert jump.size >= 3, f"rho={rho} must jump"
            onset = jump[0] + 1
            window = dts[max(1, onset - 10):onset + 10]
            # partial increments appear (neither all-full nor all-zero)
            partial = (window > 1e-12) & (window < rho * (1 - 1e-9))
            assert partial.any()
            diffs = np.diff(window)
            assert (diffs > 1e-15).any() and (diffs < -1e-15).any(), \
                "onset region oscillates"

    def test_z0_validation(self):
        with pytest.raises(ValueError):
            run_zero_dim(ZeroDimModel(),
                         af.SchemeParams(rho=0.1, T=1.0), z0=1.5)
