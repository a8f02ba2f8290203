"""Prediction, innovation and the raw/transformed update routes."""

import numpy as np
import pytest

from trackfuse.errors import ConfigError, InputError, NumericsError
from trackfuse.linalg import pinv_psd
from trackfuse.models import (
    GaussianEstimate,
    MeasurementModel,
    MotionModel,
    innovation,
    predict,
    update_raw,
    update_transformed,
)


def cv_model(dt=1.0, q=0.0):
    f = np.kron(np.array([[1.0, dt], [0.0, 1.0]]), np.eye(2))
    gamma = np.kron(np.array([[dt * dt / 2.0], [dt]]), np.eye(2))
    return MotionModel(f, gamma @ (q ** 2 * np.eye(2)) @ gamma.T)


def random_spd(rng, m, jitter=0.1):
    g = rng.standard_normal((m, m))
    return g @ g.T + jitter * np.eye(m)


class TestPredict:
    def test_cv_propagation(self):
        est = GaussianEstimate([0.0, 0.0, 1.0, 1.0], np.eye(4))
        out = predict(est, cv_model(dt=1.0))
        np.testing.assert_allclose(out.mean, [1.0, 1.0, 1.0, 1.0])

    def test_zero_covariance_zero_noise(self):
        est = GaussianEstimate([1.0, 2.0, 0.0, 0.0], np.zeros((4, 4)))
        out = predict(est, cv_model())
        np.testing.assert_array_equal(out.cov, np.zeros((4, 4)))

    def test_hand_example_matches_matrix_product(self):
        # Oracle: brute-force matrix products for F=[[1,1],[0,1]], cov=I,
        # Q=0.01 I give mean [1,-1] and cov [[2.01,1],[1,1.01]].
        f = np.array([[1.0, 1.0], [0.0, 1.0]])
        q = 0.01 * np.eye(2)
        est = GaussianEstimate([2.0, -1.0], np.eye(2))
        oracle_mean = f @ est.mean
        oracle_cov = f @ est.cov @ f.T + q
        out = predict(est, MotionModel(f, q))
        np.testing.assert_allclose(out.mean, [1.0, -1.0], atol=1e-15)
        np.testing.assert_allclose(out.cov, [[2.01, 1.0], [1.0, 1.01]], atol=1e-15)
        np.testing.assert_allclose(out.mean, oracle_mean)
        np.testing.assert_allclose(out.cov, oracle_cov)

    def test_dimension_mismatch(self):
        est = GaussianEstimate([1.0, 2.0], np.eye(2))
        with pytest.raises(ConfigError):
            predict(est, cv_model())


class TestInnovation:
    def test_identity_h_zero_r_not_allowed_but_small_r(self):
        # H = I with R -> 0 gives S -> P
        p = np.diag([1.0, 2.0])
        est = GaussianEstimate([0.0, 0.0], p)
        model = MeasurementModel(np.eye(2), 1e-12 * np.eye(2))
        _, s = innovation(est, model)
        np.testing.assert_allclose(s, p, atol=1e-10)

    def test_position_projection(self):
        est = GaussianEstimate([3.0, 4.0, 1.0, 1.0], np.eye(4))
        model = MeasurementModel(np.hstack([np.eye(2), np.zeros((2, 2))]),
                                 np.eye(2))
        z_hat, _ = innovation(est, model)
        np.testing.assert_allclose(z_hat, [3.0, 4.0])

    def test_diagonal_example(self):
        est = GaussianEstimate(np.zeros(4), np.diag([1.0, 2.0, 3.0, 4.0]))
        model = MeasurementModel(np.hstack([np.eye(2), np.zeros((2, 2))]),
                                 np.diag([25.0, 25.0]))
        _, s = innovation(est, model)
        np.testing.assert_allclose(s, np.diag([26.0, 27.0]))


class TestUpdateRaw:
    def test_zero_innovation_keeps_mean(self):
        est = GaussianEstimate([1.0, -2.0, 0.5, 0.0], np.diag([4.0, 4.0, 1.0, 1.0]))
        model = MeasurementModel(np.hstack([np.eye(2), np.zeros((2, 2))]),
                                 np.eye(2))
        z_hat, _ = innovation(est, model)
        out = update_raw(est, z_hat, model)
        np.testing.assert_allclose(out.mean, est.mean, atol=1e-12)

    def test_uninformative_measurement_limit(self):
        est = GaussianEstimate([1.0, 2.0], np.diag([3.0, 5.0]))
        model = MeasurementModel(np.eye(2), 1e12 * np.eye(2))
        out = update_raw(est, np.array([100.0, -50.0]), model)
        np.testing.assert_allclose(out.mean, est.mean, rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(out.cov, est.cov, rtol=1e-6)

    def test_scalar_case_information_form_oracle(self):
        # Oracle: scalar information form. info = 1/1 + 1/1 = 2, so the
        # posterior variance is 0.5 and mean 0.5 * (0/1 + 1/1) = 0.5.
        est = GaussianEstimate([0.0], np.array([[1.0]]))
        model = MeasurementModel(np.array([[1.0]]), np.array([[1.0]]))
        out = update_raw(est, np.array([1.0]), model)
        np.testing.assert_allclose(out.mean, [0.5], atol=1e-14)
        np.testing.assert_allclose(out.cov, [[0.5]], atol=1e-14)

    def test_posterior_not_larger_than_prior(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            est = GaussianEstimate(rng.standard_normal(4), random_spd(rng, 4))
            model = MeasurementModel(rng.standard_normal((2, 4)),
                                     random_spd(rng, 2))
            out = update_raw(est, rng.standard_normal(2), model)
            eigs = np.linalg.eigvalsh(est.cov - out.cov)
            assert eigs.min() >= -1e-10

    def test_singular_innovation_reports_condition(self):
        est = GaussianEstimate([0.0, 0.0], np.zeros((2, 2)))
        model = MeasurementModel(np.eye(2), np.diag([1.0, 1e-14]))
        with pytest.raises(NumericsError, match="cond"):
            update_raw(est, np.zeros(2), model)


class TestUpdateTransformed:
    def test_identity_transform_matches_raw(self):
        rng = np.random.default_rng(5)
        est = GaussianEstimate(rng.standard_normal(4), random_spd(rng, 4))
        model = MeasurementModel(rng.standard_normal((2, 4)), random_spd(rng, 2))
        z = rng.standard_normal(2)
        raw = update_raw(est, z, model)
        tr = update_transformed(est, z, model.H, model.R)
        np.testing.assert_allclose(tr.mean, raw.mean, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(tr.cov, raw.cov, rtol=1e-9)

    def test_full_column_rank_transform_matches_raw(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            est = GaussianEstimate(rng.standard_normal(4), random_spd(rng, 4))
            model = MeasurementModel(rng.standard_normal((2, 4)),
                                     random_spd(rng, 2))
            z = rng.standard_normal(2)
            a = rng.standard_normal((int(rng.integers(2, 6)), 2))
            raw = update_raw(est, z, model)
            tr = update_transformed(est, a @ z, a @ model.H,
                                    a @ model.R @ a.T)
            np.testing.assert_allclose(tr.mean, raw.mean, rtol=1e-9, atol=1e-9)
            np.testing.assert_allclose(tr.cov, raw.cov, rtol=1e-9)

    def test_fisher_information_identity(self):
        # H_t' R_t^+ H_t equals H' R^-1 H for a random tall transform.
        rng = np.random.default_rng(7)
        h = rng.standard_normal((2, 4))
        r = random_spd(rng, 2)
        a = rng.standard_normal((5, 2))
        lhs = (a @ h).T @ pinv_psd(a @ r @ a.T) @ (a @ h)
        rhs = h.T @ np.linalg.inv(r) @ h
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12)

    def test_negative_eigenvalue_rejected(self):
        est = GaussianEstimate([0.0, 0.0], np.eye(2))
        with pytest.raises(InputError):
            update_transformed(est, np.zeros(2), np.eye(2),
                               np.diag([1.0, -0.5]))


class TestInvariants:
    def test_covariance_symmetry_after_operations(self):
        rng = np.random.default_rng(11)
        est = GaussianEstimate(rng.standard_normal(4), random_spd(rng, 4))
        motion = cv_model(q=0.3)
        model = MeasurementModel(rng.standard_normal((2, 4)), random_spd(rng, 2))
        for _ in range(20):
            est = predict(est, motion)
            est = update_raw(est, rng.standard_normal(2), model)
            assert np.max(np.abs(est.cov - est.cov.T)) == 0.0

    def test_pseudoinverse_identity_property(self):
        # 200 random SPD S with full-column-rank A, relative Frobenius
        # residual of A'(ASA')+A - S^-1 below 1e-8.
        rng = np.random.default_rng(12)
        worst = 0.0
        for _ in range(200):
            m = int(rng.integers(1, 5))
            s = random_spd(rng, m)
            a = rng.standard_normal((m + int(rng.integers(0, 4)), m))
            lhs = a.T @ pinv_psd(a @ s @ a.T) @ a
            rhs = np.linalg.inv(s)
            worst = max(worst, np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs))
        assert worst <= 1e-8

    def test_two_sensor_update_order_invariance(self):
        rng = np.random.default_rng(13)
        for _ in range(30):
            est = GaussianEstimate(rng.standard_normal(4), random_spd(rng, 4))
            m1 = MeasurementModel(rng.standard_normal((2, 4)), random_spd(rng, 2))
            m2 = MeasurementModel(rng.standard_normal((2, 4)), random_spd(rng, 2))
            z1, z2 = rng.standard_normal(2), rng.standard_normal(2)
            seq = update_raw(update_raw(est, z1, m1), z2, m2)
            stacked_h = np.vstack([m1.H, m2.H])
            stacked_r = np.block([[m1.R, np.zeros((2, 2))],
                                  [np.zeros((2, 2)), m2.R]])
            stacked = update_raw(est, np.concatenate([z1, z2]),
                                 MeasurementModel(stacked_h, stacked_r))
            np.testing.assert_allclose(seq.mean, stacked.mean, rtol=1e-9,
                                       atol=1e-9)
            np.testing.assert_allclose(seq.cov, stacked.cov, rtol=1e-9)
