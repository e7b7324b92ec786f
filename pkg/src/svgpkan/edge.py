"""A single univariate sparse variational GP edge.

Each KAN edge carries M inducing inputs Z and a Gaussian variational
posterior N(m, S) over the function values at Z, with S represented by a
lower-triangular factor whose diagonal is stored in log space (so S stays
positive definite under unconstrained optimization).

Internally the posterior is kept in whitened coordinates: with
Kzz = L_K L_K^T, the stored parameters are mw and Lw such that

    m = L_K mw,        S = L_K (Lw Lw^T) L_K^T.

Whitening makes the KL term an identity-covariance Gaussian divergence,
which keeps optimization well conditioned even when Kzz is nearly singular
(a plain (m, S) parameterization stalls: the KL curvature grows with the
condition number of Kzz). `EdgeState` exposes the conventional unwhitened
m and L_S alongside the whitened storage.

Two predictive paths are provided:

  * deterministic: the usual SVGP predictive moments at known inputs x;
  * uncertain: closed-form output mean/variance when the input itself is
    Gaussian, via the psi statistics. At zero input variance it reduces
    exactly to the deterministic path.

The `*_core` functions operate on batched parameter dicts with arrays shaped
(E, ...) covering E independent edges at once; `EdgeState` is the single-edge
view used by the public per-edge API and by tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np
from jax.scipy.linalg import solve_triangular

from . import numerics
from .kernel import RbfHyper, psi1_core, psi2_core, sq_exp_core

# Inducing inputs are initialized on this interval; inputs are standardized
# and hidden activations are scale-controlled, so edges see roughly [-2, 2].
Z_INIT_RANGE = (-2.0, 2.0)


def chol_factor(raw):
    """Lower factor from raw storage (strict lower free, diagonal in log)."""
    m = raw.shape[-1]
    strict = jnp.tril(raw, -1)
    diag = jnp.exp(jnp.diagonal(raw, axis1=-2, axis2=-1))
    return strict + jnp.eye(m) * diag[..., None, :]


def raw_from_factor(L: np.ndarray) -> np.ndarray:
    """Inverse of `chol_factor` for a factor with positive diagonal."""
    L = np.asarray(L, dtype=np.float64)
    out = np.tril(L, -1)
    out[np.arange(L.shape[-1]), np.arange(L.shape[-1])] = np.log(np.diag(L))
    return out


def kzz_cholesky(params: dict, jitter_level):
    """Batched Cholesky of Kzz (+ jitter relative to the sf2 diagonal)."""
    z = params["z"]
    m = z.shape[-1]
    ls2 = jnp.exp(2.0 * params["log_ls"])[:, None, None]
    sf2 = jnp.exp(params["log_sf2"])
    kzz = sq_exp_core(z[:, :, None] - z[:, None, :], ls2, sf2[:, None, None])
    kzz = kzz + (jitter_level * sf2)[:, None, None] * jnp.eye(m)
    return jnp.linalg.cholesky(kzz)


def deterministic_moments_core(params: dict, x, jitter_level):
    """SVGP predictive moments at known inputs.

    x: (B, E) inputs, one column per edge. Returns mean, variance as (B, E).
    With a = L_K^-1 k_Zx the whitened form is

        mean = a^T mw,   var = k_xx - ||a||^2 + ||Lw^T a||^2.
    """
    z = params["z"]
    ls2 = jnp.exp(2.0 * params["log_ls"])
    sf2 = jnp.exp(params["log_sf2"])
    lk = kzz_cholesky(params, jitter_level)
    kxz = sq_exp_core(x[..., None] - z[None, :, :], ls2[None, :, None], sf2[None, :, None])
    kzx = jnp.transpose(kxz, (1, 2, 0))  # (E, M, B)
    a = solve_triangular(lk, kzx, lower=True)
    mean = jnp.einsum("em,emb->be", params["mw"], a)
    lw = chol_factor(params["lsw_raw"])
    sa = jnp.einsum("enm,enb->emb", lw, a)  # Lw^T a
    var = sf2[None, :] - jnp.sum(a**2, axis=1).T + jnp.sum(sa**2, axis=1).T
    return mean, jnp.maximum(var, numerics.VARIANCE_FLOOR)


def uncertain_moments_core(params: dict, mu, var, jitter_level):
    """Moment-matched output moments for Gaussian inputs N(mu, var).

    mu, var: (B, E). Returns mean, variance as (B, E), using
        E[f]   = psi1^T alpha
        E[f^2] = alpha^T Psi2 alpha + psi0 - tr(Kzz^-1 Psi2)
                 + tr(Kzz^-1 S Kzz^-1 Psi2)
    with alpha = Kzz^-1 m, and Var[f] = E[f^2] - E[f]^2. In whitened form
    alpha = L_K^-T mw and Kzz^-1 (S - Kzz) Kzz^-1 = L_K^-T (Sw - I) L_K^-1.
    """
    z = params["z"]
    m = z.shape[-1]
    ls2 = jnp.exp(2.0 * params["log_ls"])
    sf2 = jnp.exp(params["log_sf2"])
    lk = kzz_cholesky(params, jitter_level)
    linv = solve_triangular(lk, jnp.broadcast_to(jnp.eye(m), lk.shape), lower=True)
    alpha = jnp.einsum("enm,en->em", linv, params["mw"])
    lw = chol_factor(params["lsw_raw"])
    sw = lw @ jnp.transpose(lw, (0, 2, 1))
    mid = sw - jnp.eye(m)
    w = alpha[:, :, None] * alpha[:, None, :] + jnp.einsum(
        "enm,enk,ekl->eml", linv, mid, linv
    )
    p1 = psi1_core(mu[..., None], var[..., None], z[None, :, :], ls2[None, :, None], sf2[None, :, None])
    p2 = psi2_core(
        mu[..., None, None],
        var[..., None, None],
        z[None, :, :, None],
        z[None, :, None, :],
        ls2[None, :, None, None],
        sf2[None, :, None, None],
    )
    mean = jnp.einsum("bem,em->be", p1, alpha)
    ef2 = sf2[None, :] + jnp.einsum("emn,bemn->be", w, p2)
    return mean, jnp.maximum(ef2 - mean**2, numerics.VARIANCE_FLOOR)


def kl_core(params: dict, jitter_level=0.0):
    """KL(N(m, S) || N(0, Kzz)) per edge; returns an (E,) vector.

    In whitened coordinates this is KL(N(mw, Sw) || N(0, I)); Kzz cancels.
    """
    m_count = params["z"].shape[-1]
    lw = chol_factor(params["lsw_raw"])
    trace = jnp.sum(lw**2, axis=(-2, -1))
    quad = jnp.sum(params["mw"] ** 2, axis=-1)
    logdet_sw = 2.0 * jnp.sum(jnp.diagonal(params["lsw_raw"], axis1=-2, axis2=-1), axis=-1)
    return 0.5 * (trace + quad - m_count - logdet_sw)


@dataclass
class EdgeState:
    """One univariate GP edge: inducing inputs, variational posterior, kernel.

    `mw`/`lsw_raw` are the whitened storage; the conventional unwhitened
    moments (m, L_S, S) are derived views.
    """

    z: np.ndarray         # (M,) inducing inputs
    mw: np.ndarray        # (M,) whitened variational means
    lsw_raw: np.ndarray   # (M, M) raw whitened S factor (log diagonal)
    hyper: RbfHyper

    @property
    def num_inducing(self) -> int:
        return self.z.shape[0]

    def _kzz_factor(self) -> numerics.CholeskyFactor:
        kzz = np.asarray(
            sq_exp_core(
                self.z[:, None] - self.z[None, :],
                self.hyper.lengthscale**2,
                self.hyper.signal_variance,
            )
        )
        return numerics.cholesky(kzz)

    @property
    def m(self) -> np.ndarray:
        """Unwhitened variational mean L_K mw."""
        return self._kzz_factor().L @ self.mw

    def chol_s(self) -> np.ndarray:
        """Unwhitened factor L_S = L_K Lw (lower triangular, positive diag)."""
        return self._kzz_factor().L @ np.asarray(chol_factor(jnp.asarray(self.lsw_raw)))

    def s_matrix(self) -> np.ndarray:
        L = self.chol_s()
        return L @ L.T

    def params(self) -> dict:
        """Batched parameter dict with a single-edge (E=1) leading axis."""
        return {
            "z": jnp.asarray(self.z)[None, :],
            "mw": jnp.asarray(self.mw)[None, :],
            "lsw_raw": jnp.asarray(self.lsw_raw)[None, :, :],
            "log_ls": jnp.asarray([self.hyper.log_lengthscale]),
            "log_sf2": jnp.asarray([self.hyper.log_signal_variance]),
        }


def edge_from_unwhitened(z, m, L_S, hyper: RbfHyper) -> EdgeState:
    """Build an edge from conventional (m, L_S) variational parameters."""
    z = np.asarray(z, dtype=np.float64)
    kzz = np.asarray(sq_exp_core(z[:, None] - z[None, :], hyper.lengthscale**2, hyper.signal_variance))
    factor = numerics.cholesky(kzz)
    mw = numerics.solve_lower(factor, np.asarray(m, dtype=np.float64))
    lw = numerics.solve_lower(factor, np.asarray(L_S, dtype=np.float64))
    return EdgeState(z=z, mw=mw, lsw_raw=raw_from_factor(lw), hyper=hyper)


def edge_from_params(params: dict, e: int) -> EdgeState:
    return EdgeState(
        z=np.asarray(params["z"][e]),
        mw=np.asarray(params["mw"][e]),
        lsw_raw=np.asarray(params["lsw_raw"][e]),
        hyper=RbfHyper(
            log_lengthscale=float(params["log_ls"][e]),
            log_signal_variance=float(params["log_sf2"][e]),
        ),
    )


def init_edge(num_inducing: int, rng: np.random.Generator) -> EdgeState:
    """Fresh edge: Z equally spaced, posterior close to the prior.

    Whitened means get small Gaussian draws (so m is a scaled prior sample,
    keeping the initial KL ~ 0.1 regardless of Kzz conditioning) and the
    whitened S factor starts at 0.1 I, i.e. L_S = 0.1 chol(Kzz).
    """
    if num_inducing < 1:
        raise ValueError("need at least one inducing point")
    if num_inducing == 1:
        z = np.array([0.5 * (Z_INIT_RANGE[0] + Z_INIT_RANGE[1])])
    else:
        z = np.linspace(Z_INIT_RANGE[0], Z_INIT_RANGE[1], num_inducing)
    mw = 0.1 * rng.standard_normal(num_inducing)
    return EdgeState(
        z=z, mw=mw, lsw_raw=raw_from_factor(0.1 * np.eye(num_inducing)), hyper=RbfHyper()
    )


def _edge_jitter_level(e: EdgeState) -> float:
    kzz = np.asarray(
        sq_exp_core(
            e.z[:, None] - e.z[None, :], e.hyper.lengthscale**2, e.hyper.signal_variance
        )
    )
    return numerics.required_jitter_level(kzz)


def edge_moments_deterministic(x, e: EdgeState):
    """Predictive mean and variance at known inputs x (any 1-d batch)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    level = _edge_jitter_level(e)
    mean, var = deterministic_moments_core(e.params(), jnp.asarray(x)[:, None], level)
    return np.asarray(mean[:, 0]), np.asarray(var[:, 0])


def edge_moments_uncertain(mu_in: float, var_in: float, e: EdgeState):
    """Output mean and variance when the input is N(mu_in, var_in)."""
    if var_in < 0:
        raise ValueError("input variance must be nonnegative")
    level = _edge_jitter_level(e)
    mean, var = uncertain_moments_core(
        e.params(), jnp.asarray([[mu_in]]), jnp.asarray([[var_in]]), level
    )
    return float(mean[0, 0]), float(var[0, 0])


def kl_to_prior(e: EdgeState) -> float:
    """KL divergence from the variational posterior to the GP prior at Z."""
    return float(kl_core(e.params())[0])
