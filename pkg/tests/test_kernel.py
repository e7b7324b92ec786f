import numpy as np
import pytest

from conftest import gh_psi1, gh_psi2
from svgpkan.kernel import RbfHyper, k, kernel_matrix, psi0, psi1, psi2


def random_hyper(rng):
    return RbfHyper(
        log_lengthscale=float(np.log(rng.uniform(0.05, 10.0))),
        log_signal_variance=float(np.log(rng.uniform(0.1, 5.0))),
    )


class TestK:
    def test_zero_distance_gives_signal_variance(self):
        h = RbfHyper(log_signal_variance=np.log(2.5))
        assert k(1.3, 1.3, h) == pytest.approx(2.5)

    def test_unit_distance(self):
        assert k(0.0, 1.0, RbfHyper()) == pytest.approx(np.exp(-0.5), abs=1e-12)

    def test_symmetry(self, rng):
        h = random_hyper(rng)
        for _ in range(20):
            x, x2 = rng.uniform(-5, 5, 2)
            assert k(x, x2, h) == k(x2, x, h)
            assert 0.0 < k(x, x2, h) <= h.signal_variance


class TestKernelMatrix:
    def test_single_point(self):
        h = RbfHyper(log_signal_variance=np.log(1.7))
        np.testing.assert_allclose(kernel_matrix([0.0], [0.0], h), [[1.7]])

    def test_row_of_values(self):
        km = np.asarray(kernel_matrix([0.0], [0.0, 1.0], RbfHyper()))
        np.testing.assert_allclose(km, [[1.0, np.exp(-0.5)]], atol=1e-12)

    def test_kzz_positive_semidefinite(self, rng):
        for _ in range(10):
            z = rng.uniform(-5, 5, int(rng.integers(2, 15)))
            kzz = np.asarray(kernel_matrix(z, z, random_hyper(rng)))
            eigs = np.linalg.eigvalsh(kzz)
            assert eigs.min() >= -1e-10

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            kernel_matrix([], [0.0], RbfHyper())


class TestPsi0:
    def test_constant_diagonal(self):
        assert psi0(RbfHyper()) == pytest.approx(1.0)
        assert psi0(RbfHyper(log_signal_variance=np.log(2.5))) == pytest.approx(2.5)

    def test_matches_quadrature(self, rng):
        # E[k(x, x)] is the psi1 quadrature at z = x collapsed; check against
        # direct quadrature of the constant integrand.
        for _ in range(10):
            h = random_hyper(rng)
            mu, var = rng.uniform(-5, 5), rng.uniform(0.01, 4)
            q = gh_psi1(mu, var, mu, np.sqrt(1e12), h.signal_variance)  # flat kernel
            assert psi0(h) == pytest.approx(h.signal_variance, abs=1e-12)
            assert q == pytest.approx(h.signal_variance, rel=1e-9)


class TestPsi1:
    def test_zero_variance_recovers_kernel(self, rng):
        h = random_hyper(rng)
        z = rng.uniform(-5, 5, 6)
        mu = rng.uniform(-5, 5)
        got = np.asarray(psi1(mu, 0.0, z, h))
        want = np.asarray(kernel_matrix([mu], z, h))[0]
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_at_inducing_point_unit_everything(self):
        # sigma_f^2 = 1, l = 1, var = 1, mu = z -> sqrt(1/2)
        got = float(psi1(0.3, 1.0, [0.3], RbfHyper())[0])
        assert got == pytest.approx(np.sqrt(0.5), abs=1e-12)

    def test_matches_quadrature(self, rng):
        for _ in range(100):
            h = random_hyper(rng)
            mu = rng.uniform(-5, 5)
            var = rng.uniform(0.0, 4.0)
            z = rng.uniform(-5, 5, 4)
            got = np.asarray(psi1(mu, var, z, h))
            want = [gh_psi1(mu, var, zi, h.lengthscale, h.signal_variance) for zi in z]
            np.testing.assert_allclose(got, want, atol=1e-8)

    def test_bounds(self, rng):
        h = random_hyper(rng)
        vals = np.asarray(psi1(0.5, 2.0, rng.uniform(-5, 5, 8), h))
        assert np.all(vals > 0) and np.all(vals <= h.signal_variance)

    def test_rejects_negative_variance(self):
        with pytest.raises(ValueError):
            psi1(0.0, -1.0, [0.0], RbfHyper())


class TestPsi2:
    def test_zero_variance_is_outer_product(self, rng):
        h = random_hyper(rng)
        z = rng.uniform(-5, 5, 5)
        mu = rng.uniform(-5, 5)
        got = np.asarray(psi2(mu, 0.0, z, h))
        kv = np.asarray(kernel_matrix([mu], z, h))[0]
        np.testing.assert_allclose(got, np.outer(kv, kv), atol=1e-12)

    def test_unit_case(self):
        # sigma_f^2 = 1, l = 1, var = 1, mu = z_m = z_n -> sqrt(1/3)
        got = float(psi2(0.0, 1.0, [0.0], RbfHyper())[0, 0])
        assert got == pytest.approx(np.sqrt(1.0 / 3.0), abs=1e-12)

    def test_matches_quadrature(self, rng):
        for _ in range(100):
            h = random_hyper(rng)
            mu = rng.uniform(-5, 5)
            var = rng.uniform(0.0, 4.0)
            z = rng.uniform(-5, 5, 3)
            got = np.asarray(psi2(mu, var, z, h))
            want = np.array(
                [
                    [gh_psi2(mu, var, zm, zn, h.lengthscale, h.signal_variance) for zn in z]
                    for zm in z
                ]
            )
            np.testing.assert_allclose(got, want, atol=1e-8)

    def test_symmetric_and_psd(self, rng):
        for _ in range(20):
            h = random_hyper(rng)
            z = rng.uniform(-5, 5, 6)
            p2 = np.asarray(psi2(rng.uniform(-5, 5), rng.uniform(0, 4), z, h))
            np.testing.assert_allclose(p2, p2.T, atol=1e-12)
            assert np.linalg.eigvalsh(p2).min() >= -1e-8


def test_smoothing_property_effective_lengthscale(rng):
    # psi1 at (l, var) equals a kernel evaluation with lengthscale
    # sqrt(l^2 + var), scaled by sqrt(l^2 / (l^2 + var)).
    for _ in range(20):
        h = random_hyper(rng)
        mu, z = rng.uniform(-5, 5, 2)
        var = rng.uniform(0.0, 4.0)
        ls2 = h.lengthscale**2
        wide = RbfHyper(
            log_lengthscale=0.5 * np.log(ls2 + var),
            log_signal_variance=h.log_signal_variance,
        )
        expected = np.sqrt(ls2 / (ls2 + var)) * k(mu, z, wide)
        assert float(psi1(mu, var, [z], h)[0]) == pytest.approx(expected, abs=1e-12)
