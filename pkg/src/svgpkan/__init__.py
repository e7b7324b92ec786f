"""Sparse variational GP Kolmogorov-Arnold networks.

Probabilistic KANs whose edge activations are univariate sparse variational
GPs. Training maximizes a minibatch evidence lower bound; uncertainty is
propagated between layers in closed form via Gaussian moment matching, and a
post-hoc discovery pass (permutation importance + lengthscale inspection)
identifies relevant inputs and functional forms.
"""

import os as _os

# SVGPKAN_THREADS caps intra-process parallelism (0 or unset = automatic).
# Must be applied before JAX initializes its CPU backend.
_threads = _os.environ.get("SVGPKAN_THREADS", "0")
if _threads.isdigit() and int(_threads) == 1:
    _os.environ["XLA_FLAGS"] = (
        _os.environ.get("XLA_FLAGS", "") + " --xla_cpu_multi_thread_eigen=false"
    ).strip()

from jax import config as _jax_config

_jax_config.update("jax_enable_x64", True)

from .kernel import RbfHyper, k, kernel_matrix, psi0, psi1, psi2
from .edge import (
    EdgeState,
    init_edge,
    edge_moments_deterministic,
    edge_moments_uncertain,
    kl_to_prior,
)
from .layer import LayerState, init_layer, layer_forward, layer_kl, layer_curve
from .model import (
    Model,
    ModelConfig,
    TrainReport,
    init_model,
    forward,
    expected_log_lik,
    elbo_minibatch,
    train,
    predict,
    save_model,
    load_model,
)
from .discovery import (
    ImportanceReport,
    permutation_importance,
    select_features,
    selection_stability,
    classify_edges,
)
from .data import (
    Dataset,
    Standardizer,
    gen_exp1,
    gen_exp2,
    gen_friedman1,
    split,
    standardize_fit,
    csv_read,
    csv_write,
)
from .numerics import NotPositiveDefinite, CholeskyFactor, cholesky, solve_lower

__version__ = "0.1.0"
