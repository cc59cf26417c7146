import json

import numpy as np
import pytest

from reticle_switching.norms import hinf_details, hinf_norm
from reticle_switching.reduction import ReducedModel, center_models
from reticle_switching.stability import (
    AssumptionViolated,
    GeneralizedPlant,
    StabilityCertificate,
    UncertaintyRealization,
    UnstableDelta,
    assemble_lft,
    certify_guas,
    close_lft,
    empirical_ultimate_bound,
    family_uncertainty,
    member_uncertainty,
    monolithic_closed_loop,
    nominal_closed_loop,
    simulate_closed_loop,
)
from reticle_switching.systems import StateSpaceModel

from .conftest import random_stable


def dense_oracle(sys_, n=1_000_000):
    """Peak singular value on a 1e6-point grid via modal decomposition."""
    lam, V = np.linalg.eig(sys_.A)
    CV = sys_.C @ V
    WB = np.linalg.solve(V, sys_.B)
    mags = np.abs(lam)
    w = np.concatenate([[0.0], np.geomspace(mags.min() / 1e3, mags.max() * 1e3, n)])
    best = 0.0
    for chunk in np.array_split(w, 100):
        H = np.einsum("pk,wk,km->wpm", CV, 1.0 / (1j * chunk[:, None] - lam[None, :]), WB) + sys_.D
        best = max(best, float(np.max(np.linalg.svd(H, compute_uv=False)[:, 0])))
    return best


def small_loop(rng, p=4, q=2, n_p=3, r=2, regimes=(0, 2)):
    """Random 3-state plant, 2-state predictor family with feedback gains, sampling S."""
    plant = StateSpaceModel(*random_stable(rng, n_p, 1, p)[:2], C=rng.normal(size=(p, n_p)))
    S = rng.normal(size=(q, p))
    members = {}
    for reg in regimes:
        A, B, C = random_stable(rng, r, 1, p, margin=0.5)
        L = 0.1 * rng.normal(size=(r, q))
        members[reg] = ReducedModel(StateSpaceModel(A=A, B_e=B, C=C, B_f=L), reg, np.eye(r))
    return plant, center_models(members), S


def simulate(model, U, dt=0.05):
    return simulate_closed_loop(model, U, dt)


class TestNorm:
    def test_pure_gain(self, rng):
        D = rng.normal(size=(3, 2))
        sys_ = StateSpaceModel(A=np.zeros((0, 0)), B_e=np.zeros((0, 2)), C=np.zeros((3, 0)), D=D)
        assert hinf_norm(sys_) == pytest.approx(np.linalg.svd(D, compute_uv=False)[0], rel=1e-12)

    def test_first_order_lowpass(self):
        assert hinf_norm(StateSpaceModel(A=[[-1.0]], B_e=[[1.0]], C=[[1.0]])) == pytest.approx(1.0, rel=1e-4)

    def test_resonant_peak(self):
        # lightly damped oscillator; analytic peak 1 / (2 zeta sqrt(1 - zeta^2))
        z, wn = 0.01, 3.0
        A = np.array([[0.0, 1.0], [-wn * wn, -2 * z * wn]])
        sys_ = StateSpaceModel(A=A, B_e=[[0.0], [wn * wn]], C=[[1.0, 0.0]])
        assert hinf_norm(sys_) == pytest.approx(1 / (2 * z * np.sqrt(1 - z * z)), rel=1e-4)

    @pytest.mark.slow
    def test_matches_dense_grid(self, rng):
        for _ in range(4):
            A, B, C = random_stable(rng, 10, 2, 2, margin=0.05)
            sys_ = StateSpaceModel(A=A, B_e=B, C=C)
            ref = dense_oracle(sys_)
            assert hinf_norm(sys_) == pytest.approx(ref, rel=1e-3)

    def test_unstable_is_infinite(self):
        with pytest.raises(ValueError, match="norm infinite"):
            hinf_norm(StateSpaceModel(A=[[0.1]], B_e=[[1.0]], C=[[1.0]]))

    def test_output_scaling(self, rng):
        A, B, C = random_stable(rng, 6, 2, 3)
        g = hinf_norm(StateSpaceModel(A=A, B_e=B, C=C))
        for alpha in (0.01, 3.0, 250.0):
            assert hinf_norm(StateSpaceModel(A=A, B_e=B, C=alpha * C)) == pytest.approx(alpha * g, rel=1e-4)

    def test_grid_metadata(self, rng):
        A, B, C = random_stable(rng, 4)
        res = hinf_details(StateSpaceModel(A=A, B_e=B, C=C))
        mags = np.abs(np.linalg.eigvals(A))
        assert res.omega_min == pytest.approx(mags.min() / 100)
        assert res.omega_max >= mags.max() * 100 * (1 - 1e-12)
        assert res.n_grid >= 1000


class TestLFT:
    def test_zero_uncertainty_is_nominal_loop(self, rng):
        plant, fam, S = small_loop(rng)
        gp = assemble_lft(plant, fam, S)
        assert not np.any(gp.B_i)
        cl = nominal_closed_loop(gp)
        mono = monolithic_closed_loop(plant, fam.nominal, S)
        for _ in range(5):
            U = rng.normal(size=(100, 1))
            np.testing.assert_allclose(simulate(cl, U), simulate(mono, U), rtol=0, atol=1e-12)

    def test_closing_delta_reproduces_member_loop(self, rng):
        plant, fam, S = small_loop(rng)
        gp = assemble_lft(plant, fam, S)
        delta = member_uncertainty(fam, 2, include_exposure=True)
        cl = close_lft(gp, delta, delta_sees_exposure=True)
        mono = monolithic_closed_loop(plant, fam.member(2), S)
        for _ in range(20):
            U = rng.normal(size=(200, 1))
            a, b = simulate(cl, U), simulate(mono, U)
            assert np.max(np.abs(a - b)) <= 1e-8 * max(1.0, np.max(np.abs(b)))

    def test_zero_gain_gives_open_loop_error(self, rng):
        plant, fam, S = small_loop(rng)
        zeroed = center_models(
            {r: m.with_ssm(m.ssm.with_feedback(np.zeros_like(m.B_f))) for r, m in fam.regime_table.items()}
        )
        cl = nominal_closed_loop(assemble_lft(plant, zeroed, S))
        U = rng.normal(size=(150, 1))
        z = simulate(cl, U)[:, : plant.n_outputs]
        pred = zeroed.nominal.ssm.exposure_only()
        ref = simulate(plant, U) - simulate(pred, U)
        np.testing.assert_allclose(z, ref, atol=1e-12)

    def test_dimension_mismatch_names_block(self, rng):
        plant, fam, S = small_loop(rng)
        with pytest.raises(ValueError, match="C_y"):
            assemble_lft(plant, fam, S[:, :-1])
        with pytest.raises(ValueError, match="B_f"):
            assemble_lft(plant, fam, np.vstack([S, S]))

    def test_generalized_plant_validation(self):
        z = np.zeros
        with pytest.raises(ValueError, match="D_iz"):
            GeneralizedPlant(z((2, 2)), z((2, 1)), z((2, 1)), z((2, 3)), z((1, 2)), z((3, 2)), z((1, 1)), z((1, 3)), z((3, 1)), z((2, 3)))


class TestCertificate:
    def test_arithmetic(self, rng):
        plant, fam, S = small_loop(rng)
        gp = assemble_lft(plant, fam, S)
        delta = family_uncertainty(fam)
        base = certify_guas(gp, delta)
        half = delta.inflated(0.5 / (base.gamma * delta.bound))
        cert = certify_guas(gp, half)
        assert cert.margin == pytest.approx(0.5, rel=1e-9)
        assert cert.passed
        assert certify_guas(gp, delta.inflated(2.0 / (base.gamma * delta.bound))).passed is False

    def test_pass_iff_positive_margin(self):
        c = StabilityCertificate(0.5, 1.0, 0.5, True, 1e-3, 1e3, 0.0, 1000, 1e-4)
        d = json.loads(c.to_json())
        assert d["pass"] is True and d["margin"] == 0.5 and d["sufficient_only"] is True

    def test_assumption_violated(self, rng):
        plant, fam, S = small_loop(rng)
        unstable = StateSpaceModel(A=plant.A + 10 * np.eye(plant.n_states), B_e=plant.B_e, C=plant.C)
        gp = assemble_lft(unstable, fam, S)
        with pytest.raises(AssumptionViolated):
            certify_guas(gp, family_uncertainty(fam))

    def test_unstable_delta(self):
        with pytest.raises(UnstableDelta):
            UncertaintyRealization(np.array([[0.5]]), np.ones((1, 1)), np.ones((1, 1)), np.zeros((1, 1)), 1.0)

    def test_declared_bound_covers_peak_gain(self, default_run):
        d = family_uncertainty(default_run.family)
        assert d.peak_gain() <= d.bound + 1e-6

    def test_default_family_passes(self, default_run):
        cert = default_run.cert.certificate
        assert cert.passed and cert.margin > 0
        assert cert.margin == pytest.approx(1 - cert.gamma * cert.delta_bound)

    def test_inflated_family_fails(self, default_run):
        r = default_run.cert
        cert = certify_guas(r.gp, r.delta.inflated(10.0))
        assert not cert.passed and cert.margin < 0


class TestEmpiricalBound:
    def test_zero_excitation(self, rng):
        plant, fam, S = small_loop(rng)
        b = empirical_ultimate_bound(nominal_closed_loop(assemble_lft(plant, fam, S)), excitation=0.0)
        assert b.bound == 0.0 and b.decaying

    def test_certified_loop_decays(self, default_run):
        r = default_run.cert
        cl = close_lft(r.gp, r.delta)
        rows = slice(0, r.gp.C_z.shape[0])
        n_ok = sum(empirical_ultimate_bound(cl, seed=s, z_rows=rows).decaying for s in range(100))
        assert n_ok >= 99

    def test_negative_control_does_not_decay(self, default_run):
        r = default_run.cert
        bad = r.delta.inflated(100.0)
        assert not certify_guas(r.gp, bad).passed
        cl = close_lft(r.gp, bad)
        rows = slice(0, r.gp.C_z.shape[0])
        assert any(not empirical_ultimate_bound(cl, seed=s, z_rows=rows).decaying for s in range(10))
