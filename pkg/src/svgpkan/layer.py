"""A KAN layer: a D_out x D_in grid of independent GP edges.

Output j is the sum over inputs i of the edge activations phi_{j,i}(x_i).
Edges are treated as independent (mean-field), so output means and variances
are both plain sums of the per-edge moments. Parameters for all edges of a
layer live in batched arrays with a leading edge axis, flattened as
e = j * d_in + i, so the whole grid is evaluated in one shot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import jax.numpy as jnp
import numpy as np

from . import numerics
from .edge import (
    EdgeState,
    deterministic_moments_core,
    edge_from_params,
    init_edge,
    kl_core,
    uncertain_moments_core,
)
from .kernel import sq_exp_core


@dataclass
class Gaussian1D:
    """A per-dimension Gaussian message passed between layers."""

    mean: float
    variance: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.variance)):
            raise ValueError("Gaussian1D requires finite moments")
        if self.variance < 0:
            raise ValueError("Gaussian1D variance must be nonnegative")


@dataclass
class LayerState:
    """Batched parameters for all d_in * d_out edges of one layer."""

    d_in: int
    d_out: int
    params: dict = field(repr=False)  # arrays with leading axis E = d_in * d_out

    @property
    def num_edges(self) -> int:
        return self.d_in * self.d_out

    @property
    def num_inducing(self) -> int:
        return self.params["z"].shape[-1]

    def edge(self, i: int, j: int) -> EdgeState:
        """The edge mapping input i to output j."""
        self._check_indices(i, j)
        return edge_from_params(self.params, j * self.d_in + i)

    def _check_indices(self, i: int, j: int) -> None:
        if not (0 <= i < self.d_in and 0 <= j < self.d_out):
            raise IndexError(f"edge ({j},{i}) out of range for {self.d_in}->{self.d_out}")


def init_layer(d_in: int, d_out: int, num_inducing: int, rng: np.random.Generator) -> LayerState:
    edges = [init_edge(num_inducing, rng) for _ in range(d_in * d_out)]
    params = {
        "z": jnp.asarray(np.stack([e.z for e in edges])),
        "mw": jnp.asarray(np.stack([e.mw for e in edges])),
        "lsw_raw": jnp.asarray(np.stack([e.lsw_raw for e in edges])),
        "log_ls": jnp.asarray([e.hyper.log_lengthscale for e in edges]),
        "log_sf2": jnp.asarray([e.hyper.log_signal_variance for e in edges]),
    }
    return LayerState(d_in=d_in, d_out=d_out, params=params)


def layer_moments_core(params: dict, d_in: int, d_out: int, mu, var, jitter_level):
    """Batched layer forward on (B, d_in) mean/variance arrays."""
    src = jnp.tile(jnp.arange(d_in), d_out)
    mean_e, var_e = uncertain_moments_core(
        params, mu[:, src], var[:, src], jitter_level
    )
    b = mean_e.shape[0]
    out_mean = mean_e.reshape(b, d_out, d_in).sum(axis=-1)
    out_var = var_e.reshape(b, d_out, d_in).sum(axis=-1)
    return out_mean, out_var


def layer_jitter_level(layer: LayerState) -> float:
    """Smallest ladder level that factors every edge's Kzz."""
    z = np.asarray(layer.params["z"])
    ls = np.exp(np.asarray(layer.params["log_ls"]))
    sf2 = np.exp(np.asarray(layer.params["log_sf2"]))
    level = 0.0
    for e in range(layer.num_edges):
        kzz = np.asarray(sq_exp_core(z[e][:, None] - z[e][None, :], ls[e] ** 2, sf2[e]))
        level = max(level, numerics.required_jitter_level(kzz))
    return level


def layer_forward(inputs: list[Gaussian1D] | list[list[Gaussian1D]], layer: LayerState):
    """Forward a batch of Gaussian inputs through the layer.

    Accepts a single sample (list of d_in Gaussian1D) or a batch (list of such
    lists); returns the same nesting with d_out Gaussian1D per sample.
    """
    single = inputs and isinstance(inputs[0], Gaussian1D)
    batch = [inputs] if single else inputs
    mu = jnp.asarray([[g.mean for g in row] for row in batch])
    var = jnp.asarray([[g.variance for g in row] for row in batch])
    if mu.shape[1] != layer.d_in:
        raise ValueError(f"expected {layer.d_in} inputs, got {mu.shape[1]}")
    level = layer_jitter_level(layer)
    out_mean, out_var = layer_moments_core(layer.params, layer.d_in, layer.d_out, mu, var, level)
    out = [
        [Gaussian1D(float(m), float(v)) for m, v in zip(mrow, vrow)]
        for mrow, vrow in zip(np.asarray(out_mean), np.asarray(out_var))
    ]
    return out[0] if single else out


def layer_kl(layer: LayerState) -> float:
    """Sum of per-edge KL terms (the variational posterior factorizes)."""
    return float(jnp.sum(kl_core(layer.params)))


def layer_curve(layer: LayerState, i: int, j: int, grid):
    """Deterministic-path (mean, std) of edge (j, i) along a grid of inputs.

    Used to visualize the learned univariate edge functions.
    """
    layer._check_indices(i, j)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        return np.zeros(0), np.zeros(0)
    edge = layer.edge(i, j)
    level = layer_jitter_level(layer)
    mean, var = deterministic_moments_core(edge.params(), jnp.asarray(grid)[:, None], level)
    return np.asarray(mean[:, 0]), np.sqrt(np.asarray(var[:, 0]))
