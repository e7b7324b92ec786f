"""Shared independent oracles for the test suite.

These deliberately avoid the library's own computational paths: quadrature
sums elementary Gaussian evaluations, the dense GP oracles use explicit
matrix inverses, and gradients are checked by central finite differences.
"""

import jax
import jax.numpy as jnp
import numpy as np
import pytest

GH_NODES, GH_WEIGHTS = np.polynomial.hermite.hermgauss(50)


def log_normal_pdf(x, mu, var):
    return -0.5 * np.log(2.0 * np.pi * var) - (x - mu) ** 2 / (2.0 * var)


def gh_integral(log_f, center, scale, nodes=GH_NODES, weights=GH_WEIGHTS):
    """integral of exp(log_f(x)) dx by Gauss-Hermite against N(center, scale^2).

    The change of variables is importance-reweighted in log space, so the
    node scale can be matched to the narrowest Gaussian factor of the
    integrand (plain scaling by the input sd cannot resolve kernels much
    narrower than the input distribution).
    """
    x = center + np.sqrt(2.0) * scale * nodes
    log_w = np.log(weights) - 0.5 * np.log(np.pi) + nodes**2 + 0.5 * np.log(2.0 * np.pi * scale**2)
    return float(np.sum(np.exp(log_w + log_f(x))))


def gh_psi1(mu, var, z, ls, sf2):
    """Quadrature E[k(x, z)] for x ~ N(mu, var), scalar z."""
    if var == 0.0:
        return sf2 * np.exp(-((z - mu) ** 2) / (2.0 * ls**2))
    sd = np.sqrt(var)
    center, scale = (z, ls) if ls < sd else (mu, sd)

    def log_f(x):
        return np.log(sf2) - (x - z) ** 2 / (2.0 * ls**2) + log_normal_pdf(x, mu, var)

    return gh_integral(log_f, center, scale)


def gh_psi2(mu, var, z_m, z_n, ls, sf2):
    """Quadrature E[k(x, z_m) k(x, z_n)] for x ~ N(mu, var)."""
    if var == 0.0:
        return (
            sf2**2
            * np.exp(-((z_m - mu) ** 2) / (2.0 * ls**2))
            * np.exp(-((z_n - mu) ** 2) / (2.0 * ls**2))
        )
    sd = np.sqrt(var)
    kernel_width = ls / np.sqrt(2.0)  # width of the product of the two kernels
    zbar = 0.5 * (z_m + z_n)
    center, scale = (zbar, kernel_width) if kernel_width < sd else (mu, sd)

    def log_f(x):
        return (
            2.0 * np.log(sf2)
            - (x - z_m) ** 2 / (2.0 * ls**2)
            - (x - z_n) ** 2 / (2.0 * ls**2)
            + log_normal_pdf(x, mu, var)
        )

    return gh_integral(log_f, center, scale)


def rbf_np(x, z, ls, sf2):
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    return sf2 * np.exp(-((x[..., :, None] - z[..., None, :]) ** 2) / (2.0 * ls**2))


def dense_edge_moments(x, edge):
    """Naive-inverse SVGP predictive moments for one edge (numpy only)."""
    ls, sf2 = edge.hyper.lengthscale, edge.hyper.signal_variance
    kzz = rbf_np(edge.z, edge.z, ls, sf2)
    m_vec = edge.m
    s_mat = edge.s_matrix()
    jitter = _match_jitter(kzz)
    kzz = kzz + jitter * np.eye(len(edge.z))
    kinv = np.linalg.inv(kzz)
    kxz = rbf_np(np.atleast_1d(x), edge.z, ls, sf2)
    mean = kxz @ kinv @ m_vec
    var = sf2 - np.einsum("bm,mn,bn->b", kxz, kinv @ (kzz - s_mat) @ kinv, kxz)
    return mean, var


def dense_gaussian_kl(m0, s0, s1):
    """KL(N(m0, s0) || N(0, s1)) with explicit inverses and slogdets."""
    n = len(m0)
    s1_inv = np.linalg.inv(s1)
    _, logdet0 = np.linalg.slogdet(s0)
    _, logdet1 = np.linalg.slogdet(s1)
    return 0.5 * (np.trace(s1_inv @ s0) + m0 @ s1_inv @ m0 - n + logdet1 - logdet0)


def _match_jitter(kzz):
    from svgpkan import numerics

    return numerics.cholesky(kzz).jitter


def finite_difference_grads(loss_fn, tree, step=1e-5):
    """Central finite differences of a scalar pytree loss, leaf by leaf."""
    flat, treedef = jax.tree_util.tree_flatten(tree)
    flat = [np.array(leaf, dtype=np.float64) for leaf in flat]

    def loss_at(leaves):
        return float(loss_fn(treedef.unflatten([jnp.asarray(v) for v in leaves])))

    grads = []
    for idx, leaf in enumerate(flat):
        g = np.zeros_like(leaf)
        it = np.ndindex(leaf.shape) if leaf.ndim else [()]
        for pos in it:
            plus = [v.copy() for v in flat]
            minus = [v.copy() for v in flat]
            if leaf.ndim:
                plus[idx][pos] += step
                minus[idx][pos] -= step
            else:
                plus[idx] = plus[idx] + step
                minus[idx] = minus[idx] - step
            val = (loss_at(plus) - loss_at(minus)) / (2.0 * step)
            if leaf.ndim:
                g[pos] = val
            else:
                g = np.asarray(val)
        grads.append(g)
    return treedef.unflatten(grads)


def assert_grad_close(analytic, numeric, rel=1e-4, atol=1e-7):
    a_leaves = jax.tree_util.tree_leaves(analytic)
    n_leaves = jax.tree_util.tree_leaves(numeric)
    for a, n in zip(a_leaves, n_leaves):
        a = np.asarray(a)
        n = np.asarray(n)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), atol / rel)
        assert np.all(np.abs(a - n) <= rel * denom), (
            f"gradient mismatch: max rel err "
            f"{np.max(np.abs(a - n) / denom)}"
        )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
