"""Outer loop: staggered fixpoints, the adaptive time update and full runs."""

import math

import numpy as np
import pytest

import amfrac as af
from amfrac.diagnostics import check_trace_invariants
from amfrac.solvers import SolverFailure


class TestTimeUpdate:
    def test_formula(self):
        assert af.time_update(0.0, 0.03, 0.1, 1.0) == pytest.approx(0.07)

    def test_jump_regime(self):
        assert af.time_update(0.42, 0.1, 0.1, 1.0) == 0.42

    def test_clamp_at_final_time(self):
        assert af.time_update(0.95, 0.0, 0.1, 1.0) == 1.0

    def test_round_off_overshoot_clamped(self):
        t = af.time_update(0.5, 0.1 * (1 + 1e-9), 0.1, 1.0)
        assert t == 0.5

    def test_inconsistent_increment_rejected(self):
        with pytest.raises(SolverFailure):
            af.time_update(0.0, 0.2, 0.1, 1.0)


class TestAMLoop:
    def test_fixpoint_is_invariant(self, ct_coarse_setup):
        # a locally stable state (inactive ball) is a fixpoint of the map:
        # re-running the loop at the same time must return it in one pass
        mesh, model, load, params = ct_coarse_setup
        z0 = np.ones(mesh.n_nodes)
        t = 0.15
        res1 = af.am_loop(t, z0, mesh, model, load, params)
        assert not res1.z_report.constraint_active, "need a relaxed state"
        res2 = af.am_loop(t, res1.z, mesh, model, load, params,
                          u_prev=res1.u)
        assert res2.iters == 1
        assert np.abs(res2.z - res1.z).max() <= params.tol_am
        assert np.abs(res2.u - res1.u).max() <= \
            params.tol_am * max(1.0, np.abs(res1.u).max())

    def test_monotone_energy_dissipation(self, ct_coarse_trace):
        *_, trace = ct_coarse_trace
        assert trace.am_energy_histories, "fixture must keep histories"
        for hist in trace.am_energy_histories.values():
            h = np.array(hist)
            if len(h) < 2:
                continue
            scale = max(np.abs(h).max(), 1e-300)
            assert np.diff(h).max() <= 1e-10 * scale

    def test_fixpoint_conditions_hold(self, ct_coarse_setup):
        mesh, model, load, params = ct_coarse_setup
        t = 0.6
        res = af.am_loop(t, np.ones(mesh.n_nodes), mesh, model, load, params)
        # damage KKT is exact for the returned displacement
        assert res.z_report.stationarity_residual <= 10 * params.tol_newton
        # displacement equilibrium holds to the staggered tolerance
        r = af.grad_u(af.State(t, res.u, res.z), mesh, model, load)
        mask, _ = load.dirichlet_dofs(mesh)
        scale = np.abs(af.assemble_K(res.z, mesh, model).diagonal()).max() * \
            max(1.0, np.abs(res.u).max())
        assert np.abs(r[~mask]).max() <= 10 * params.tol_am * scale


class TestRun:
    def test_no_damage_run_is_uniform_grid(self):
        # huge fracture toughness freezes the damage field exactly
        # (the regularizer pulls z up against the irreversibility bound)
        mesh = af.build_ct_mesh(1.0, 0.25, 0.25)
        model = af.MaterialModel(young_E=100.0, poisson_nu=0.3, eta=1e-4,
                                 preset="AT", g_c=1e6, theta=0.1)
        params = af.SchemeParams(rho=0.125, T=1.0,
                                 norm_V=af.NormSpec("lalpha", 4.0),
                                 store_all_snapshots=True)
        load = af.LoadProgram(mode="DIRICHLET_RAMP", T=1.0, direction=(0, 1),
                              ubar_rate=0.1)
        z0 = np.full(mesh.n_nodes, 0.9)
        trace = af.run(mesh, model, load, params, z0)
        assert trace.n_steps == math.ceil(params.T / params.rho)
        for r in trace.records:
            assert r.dz_norm_V == 0.0
            assert not r.ball_active
        assert all(r.dt == params.rho for r in trace.records[1:])
        _, z_final = trace.snapshot(trace.n_steps)
        assert np.array_equal(z_final, z0)

    def test_invariants_on_adaptive_trace(self, ct_coarse_trace):
        *_, trace = ct_coarse_trace
        report = check_trace_invariants(trace)
        assert report.ok(), report

    def test_invariants_on_traction_trace(self, analysis_traction_trace):
        *_, trace = analysis_traction_trace
        report = check_trace_invariants(trace)
        assert report.ok(), report

    def test_final_time_exact(self, ct_coarse_trace):
        *_, params, trace = *ct_coarse_trace[:3], ct_coarse_trace[3], ct_coarse_trace[4]
        assert trace.records[-1].t == params.T

    def test_partial_trace_on_step_budget(self, ct_coarse_setup):
        mesh, model, load, params = ct_coarse_setup
        import dataclasses
        tight = dataclasses.replace(params, max_steps=3)
        with pytest.raises(SolverFailure) as err:
            af.run(mesh, model, load, tight, np.ones(mesh.n_nodes))
        partial = err.value.partial_trace
        assert partial.aborted
        assert len(partial.records) == 4

    def test_snapshot_stride_and_onsets(self, ct_coarse_setup):
        mesh, model, load, params = ct_coarse_setup
        import dataclasses
        sparse = dataclasses.replace(params, store_all_snapshots=False,
                                     snapshot_stride=7)
        trace = af.run(mesh, model, load, sparse, np.ones(mesh.n_nodes))
        stored = set(trace.snapshots)
        assert 0 in stored
        assert trace.n_steps in stored
        for k in range(0, trace.n_steps + 1, 7):
            assert k in stored
        # jump onsets are always stored
        for k in range(1, trace.n_steps + 1):
            if trace.records[k].dt <= 1e-14 and trace.records[k - 1].dt > 1e-14:
                assert k in stored


class TestPureAM:
    def test_large_radius_matches_pure_am_on_same_grid(self, ct_coarse_setup):
        """Once the radius exceeds every damage increment, the adaptive
        scheme is a staggered run; replaying its own grid without the ball
        must reproduce it step for step."""
        mesh, model, load, params = ct_coarse_setup
        import dataclasses
        z0 = np.ones(mesh.n_nodes)
        am = af.run_pure_am(mesh, model, load, params, z0, n_steps=10)
        bound = 2 * max(r.dz_norm_V for r in am.records) + \
            max(r.dt for r in am.records)
        big = dataclasses.replace(params, rho=bound)
        em = af.run(mesh, model, load, big, z0)
        assert not any(r.ball_active for r in em.records)
        replay = af.run_pure_am(mesh, model, load, big, z0, n_steps=0,
                                times=em.times())
        tol = 10 * params.tol_am
        for a, b in zip(em.records, replay.records):
            assert a.t == b.t
            assert abs(a.energy - b.energy) <= tol * max(1.0, abs(a.energy))
            assert abs(a.reaction - b.reaction) <= tol * max(1.0, abs(a.reaction))
        for k in em.snapshots:
            u1, z1 = em.snapshots[k]
            u2, z2 = replay.snapshots[k]
            assert np.abs(z1 - z2).max() <= tol
            assert np.abs(u1 - u2).max() <= tol * max(1.0, np.abs(u1).max())

    def test_elastic_phase_is_linear(self):
        # undamaged regime: reaction grows linearly with the ramp
        mesh = af.build_ct_mesh(1.0, 0.25, 0.25)
        model = af.MaterialModel(young_E=100.0, poisson_nu=0.3, eta=1e-4,
                                 preset="AT", g_c=1e6, theta=0.1)
        params = af.SchemeParams(rho=0.25, T=1.0,
                                 norm_V=af.NormSpec("lalpha", 4.0))
        load = af.LoadProgram(mode="DIRICHLET_RAMP", T=1.0, direction=(0, 1),
                              ubar_rate=0.05)
        trace = af.run_pure_am(mesh, model, load, params,
                               np.full(mesh.n_nodes, 0.9), n_steps=4)
        t = trace.times()
        F = np.array([r.reaction for r in trace.records])
        slope = F[-1] / t[-1]
        assert np.allclose(F[1:], slope * t[1:], rtol=1e-8)
