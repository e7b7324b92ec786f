"""Squared-exponential kernel and its Gaussian-input expectations.

Besides plain kernel evaluation this module provides the psi statistics:
expectations of kernel quantities when the input is N(mu, var) rather than a
point. These are what make closed-form uncertainty propagation through a GP
edge possible:

    psi0        = E_x[k(x, x)]
    psi1[m]     = E_x[k(x, z_m)]
    psi2[m, n]  = E_x[k(x, z_m) k(x, z_n)]

For the RBF kernel all three have closed forms. Input variance enters psi1 as
an inflation of the squared lengthscale (l^2 -> l^2 + var), i.e. uncertainty
about the input location smooths the edge function.

The `*_core` functions broadcast over arbitrary leading axes and accept raw
(lengthscale^2, signal variance) arrays; they are the building blocks for the
batched multi-edge code in `edge`/`layer`. The named-argument wrappers below
them are the scalar-hyperparameter API.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax.numpy as jnp


@dataclass(frozen=True)
class RbfHyper:
    """RBF hyperparameters, stored in log space so positivity is structural."""

    log_lengthscale: float = 0.0
    log_signal_variance: float = 0.0

    @property
    def lengthscale(self) -> float:
        return float(jnp.exp(self.log_lengthscale))

    @property
    def signal_variance(self) -> float:
        return float(jnp.exp(self.log_signal_variance))


def sq_exp_core(diff, ls2, sf2):
    """sf2 * exp(-diff^2 / (2 ls2)), broadcasting."""
    return sf2 * jnp.exp(-(diff**2) / (2.0 * ls2))


def psi1_core(mu, var, z, ls2, sf2):
    """E[k(x, z)] for x ~ N(mu, var); broadcasts mu/var against z."""
    denom = ls2 + var
    return sf2 * jnp.sqrt(ls2 / denom) * jnp.exp(-((z - mu) ** 2) / (2.0 * denom))


def psi2_core(mu, var, z_m, z_n, ls2, sf2):
    """E[k(x, z_m) k(x, z_n)] for x ~ N(mu, var)."""
    zbar = 0.5 * (z_m + z_n)
    denom = ls2 + 2.0 * var
    return (
        sf2**2
        * jnp.sqrt(ls2 / denom)
        * jnp.exp(-((z_m - z_n) ** 2) / (4.0 * ls2))
        * jnp.exp(-((mu - zbar) ** 2) / denom)
    )


def k(x: float, x2: float, h: RbfHyper) -> float:
    """Kernel value for a pair of scalar inputs."""
    ls2 = jnp.exp(2.0 * h.log_lengthscale)
    sf2 = jnp.exp(h.log_signal_variance)
    return float(sq_exp_core(jnp.asarray(x) - jnp.asarray(x2), ls2, sf2))


def kernel_matrix(X, Z, h: RbfHyper) -> jnp.ndarray:
    """Cross-kernel matrix with entry (a, b) = k(X[a], Z[b])."""
    X = jnp.asarray(X, dtype=jnp.float64)
    Z = jnp.asarray(Z, dtype=jnp.float64)
    if X.size == 0 or Z.size == 0:
        raise ValueError("kernel_matrix requires nonempty inputs")
    ls2 = jnp.exp(2.0 * h.log_lengthscale)
    sf2 = jnp.exp(h.log_signal_variance)
    return sq_exp_core(X[:, None] - Z[None, :], ls2, sf2)


def psi0(h: RbfHyper) -> float:
    """E[k(x, x)]; constant for the RBF kernel regardless of the input law."""
    return h.signal_variance


def psi1(mu: float, var: float, Z, h: RbfHyper) -> jnp.ndarray:
    """Expected kernel vector E[k(x, Z)] under x ~ N(mu, var)."""
    if var < 0:
        raise ValueError("input variance must be nonnegative")
    Z = jnp.asarray(Z, dtype=jnp.float64)
    ls2 = jnp.exp(2.0 * h.log_lengthscale)
    sf2 = jnp.exp(h.log_signal_variance)
    return psi1_core(mu, var, Z, ls2, sf2)


def psi2(mu: float, var: float, Z, h: RbfHyper) -> jnp.ndarray:
    """Expected kernel outer product E[k(x, Z) k(x, Z)^T] under x ~ N(mu, var)."""
    if var < 0:
        raise ValueError("input variance must be nonnegative")
    Z = jnp.asarray(Z, dtype=jnp.float64)
    ls2 = jnp.exp(2.0 * h.log_lengthscale)
    sf2 = jnp.exp(h.log_signal_variance)
    return psi2_core(mu, var, Z[:, None], Z[None, :], ls2, sf2)
