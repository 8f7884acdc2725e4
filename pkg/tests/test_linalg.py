import numpy as np
import pytest

from handspd import linalg
from handspd.errors import InvalidInput, RankError, SpectralDomainError

import oracles


class TestSymEig:
    def test_identity(self):
        pair = linalg.sym_eig(np.eye(3))
        assert np.allclose(pair.values, [1, 1, 1])
        recon = pair.vectors @ np.diag(pair.values) @ pair.vectors.T
        assert np.abs(recon - np.eye(3)).max() < 1e-12

    def test_diagonal_with_sign_convention(self):
        pair = linalg.sym_eig(np.diag([3.0, 1.0]))
        assert np.allclose(pair.values, [3.0, 1.0])
        assert np.allclose(pair.vectors, np.eye(2))

    def test_random_reconstruction(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((6, 6))
        s = a @ a.T + a.T @ a
        pair = linalg.sym_eig(s)
        recon = pair.vectors @ np.diag(pair.values) @ pair.vectors.T
        rel = np.linalg.norm(recon - s) / max(1.0, np.linalg.norm(s))
        assert rel < 1e-10
        assert np.abs(pair.vectors.T @ pair.vectors - np.eye(6)).max() < 1e-10
        assert np.all(np.diff(pair.values) <= 1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_characteristic_polynomial_oracle(self, seed):
        rng = np.random.default_rng(seed)
        s2 = rng.standard_normal((2, 2))
        s2 = s2 + s2.T
        assert np.abs(linalg.sym_eig(s2).values - oracles.eigvals_2x2(s2)).max() < 1e-8
        s3 = rng.standard_normal((3, 3))
        s3 = s3 + s3.T
        assert np.abs(linalg.sym_eig(s3).values - oracles.eigvals_3x3(s3)).max() < 1e-8

    def test_non_finite_rejected(self):
        bad = np.eye(2)
        bad[0, 1] = bad[1, 0] = np.nan
        with pytest.raises(InvalidInput):
            linalg.sym_eig(bad)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        s = rng.standard_normal((5, 5))
        s = s + s.T
        p1 = linalg.sym_eig(s)
        p2 = linalg.sym_eig(s.copy())
        assert np.array_equal(p1.vectors, p2.vectors)
        assert np.array_equal(p1.values, p2.values)


class TestSpectralApply:
    def test_log_of_identity_is_zero(self):
        assert np.abs(linalg.spectral_apply(np.eye(3), linalg.LOG)).max() == 0.0

    def test_log_of_diagonal(self):
        out = linalg.spectral_apply(np.diag([np.e, np.e**2]), linalg.LOG)
        assert np.allclose(out, np.diag([1.0, 2.0]), atol=1e-12)

    def test_log_exp_round_trip(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((5, 5))
        x = a @ a.T + 0.5 * np.eye(5)
        back = linalg.spectral_apply(linalg.spectral_apply(x, linalg.LOG), linalg.EXP)
        assert np.linalg.norm(back - x) < 1e-8

    def test_identity_fn_is_identity(self):
        rng = np.random.default_rng(2)
        s = rng.standard_normal((4, 4))
        s = s + s.T
        assert np.abs(linalg.spectral_apply(s, linalg.IDENTITY) - s).max() < 1e-12

    def test_monotone_fn_maps_ordered_eigenvalues(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((5, 5))
        x = a @ a.T + np.eye(5)
        out_vals = np.sort(np.linalg.eigvalsh(linalg.spectral_apply(x, linalg.LOG)))
        in_vals = np.sort(np.linalg.eigvalsh(x))
        assert np.abs(out_vals - np.log(in_vals)).max() < 1e-9

    def test_domain_error_carries_eigenvalue(self):
        with pytest.raises(SpectralDomainError) as err:
            linalg.spectral_apply(np.diag([1.0, -2.0]), linalg.LOG)
        assert err.value.eigenvalue == pytest.approx(-2.0)


class TestSpectralFnBackward:
    def test_diagonal_log_gradient(self):
        s = np.diag([2.0, 5.0])
        out = linalg.spectral_fn_backward(s, linalg.LOG, np.eye(2), linalg.sym_eig(s))
        assert np.allclose(out, np.diag([0.5, 0.2]), atol=1e-12)

    def test_zero_cotangent(self):
        rng = np.random.default_rng(0)
        s = rng.standard_normal((4, 4))
        s = s + s.T
        out = linalg.spectral_fn_backward(s, linalg.LOG if False else linalg.IDENTITY,
                                          np.zeros((4, 4)), linalg.sym_eig(s))
        assert np.abs(out).max() == 0.0

    @pytest.mark.parametrize("seed", range(4))
    def test_finite_difference_log_and_clamp(self, seed):
        from handspd.gradcheck import fd_grad, rel_error

        rng = np.random.default_rng(seed)
        a = rng.standard_normal((5, 5))
        s = a @ a.T / 5 + 0.5 * np.eye(5)
        c = rng.standard_normal((5, 5))
        c = 0.5 * (c + c.T)
        for fn in (linalg.LOG, linalg.clamp_fn(1e-4)):
            analytic = linalg.spectral_fn_backward(s, fn, c, linalg.sym_eig(s))
            probe = lambda m: float(
                np.sum(c * linalg.spectral_apply(0.5 * (m + m.T), fn))
            )
            numeric = linalg.symmetrize(fd_grad(probe, s))
            assert rel_error(analytic, numeric) < 1e-5

    def test_adjoint_identity(self):
        # <C, d/dt f(S + tD)> == <backward(C), D> for symmetric directions D.
        rng = np.random.default_rng(7)
        a = rng.standard_normal((4, 4))
        s = a @ a.T / 4 + np.eye(4)
        c = rng.standard_normal((4, 4))
        c = 0.5 * (c + c.T)
        d = rng.standard_normal((4, 4))
        d = 0.5 * (d + d.T)
        h = 1e-5
        fwd = lambda m: linalg.spectral_apply(m, linalg.LOG)
        directional = np.sum(c * (fwd(s + h * d) - fwd(s - h * d))) / (2 * h)
        adjoint = np.sum(linalg.spectral_fn_backward(s, linalg.LOG, c, linalg.sym_eig(s)) * d)
        assert abs(directional - adjoint) / max(abs(adjoint), 1e-8) < 1e-6

    def test_dimension_mismatch(self):
        s = np.eye(3)
        with pytest.raises(InvalidInput):
            linalg.spectral_fn_backward(s, linalg.LOG, np.eye(2), linalg.sym_eig(s))


class TestQrOrthonormalize:
    def test_identity_preserved(self):
        assert np.array_equal(linalg.qr_orthonormalize(np.eye(3)), np.eye(3))

    def test_positive_scaling_removed(self):
        out = linalg.qr_orthonormalize(np.diag([2.0, 3.0]))
        assert np.allclose(out, np.eye(2), atol=1e-14)

    def test_random_wide_matrix(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((4, 7))
        out = linalg.qr_orthonormalize(m)
        assert np.abs(out @ out.T - np.eye(4)).max() < 1e-12
        # Same row space: compare orthogonal projectors.
        p_in = m.T @ np.linalg.solve(m @ m.T, m)
        p_out = out.T @ out
        assert np.abs(p_in - p_out).max() < 1e-10

    def test_rank_deficient_rejected(self):
        m = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])
        with pytest.raises(RankError):
            linalg.qr_orthonormalize(m)

    def test_too_many_rows_rejected(self):
        with pytest.raises(RankError):
            linalg.qr_orthonormalize(np.ones((3, 2)))
