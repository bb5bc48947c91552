"""Regularized attention over imputed values.

Unreliability scores are zero for observed cells and the mixture's mixed
variance for imputed ones; attention softmax runs over the feature dimension
within each time step, so a step's weights are comparable across features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .numerics import Tensor


@dataclass
class RanParams:
    w_gamma: Tensor  # (N, N)
    b_gamma: Tensor  # (N, 1)
    w_ran: Tensor  # (N, N)
    b_ran: Tensor  # (N, 1)

    def named(self) -> dict[str, Tensor]:
        return {
            "w_gamma": self.w_gamma,
            "b_gamma": self.b_gamma,
            "w_ran": self.w_ran,
            "b_ran": self.b_ran,
        }


def init_ran(n_features: int, rng: np.random.Generator) -> RanParams:
    """Attention weights start near-uniform; the projection starts near N*I.

    gamma softmax-normalizes over the N features, scaling the reweighted
    journey by ~1/N, so a pass-through start needs the projection at N times
    identity; a small-random start leaves the ReLU output (and its gradient)
    pinned near zero. The projection bias starts slightly positive for the
    same reason: it keeps the ReLU units receptive while the upstream mixture
    is still settling.
    """
    eye = float(n_features) * np.eye(n_features)
    return RanParams(
        w_gamma=nm.parameter(rng.normal(0.0, 0.1, size=(n_features, n_features))),
        b_gamma=nm.parameter(np.zeros((n_features, 1))),
        w_ran=nm.parameter(eye + rng.normal(0.0, 0.1, size=(n_features, n_features))),
        b_ran=nm.parameter(np.full((n_features, 1), 0.1)),
    )


def unreliability(M: np.ndarray, mixed_var: Tensor) -> Tensor:
    """Zero where observed, mixed variance where imputed."""
    if M.shape != mixed_var.shape:
        raise nm.DimensionError(f"unreliability shapes M {M.shape} vs var {mixed_var.shape}")
    return nm.mul(nm.constant(1.0 - M), mixed_var)


def attention_weights(phi: Tensor, params: RanParams) -> Tensor:
    """Per time step, softmax over features of W_gamma (1 - phi) + b_gamma."""
    T = phi.shape[1]
    scores = nm.add(
        nm.matmul(params.w_gamma, nm.sub(1.0, phi)), nm.tile_cols(params.b_gamma, T)
    )
    return nm.softmax(scores, axis=0)


def regularize(
    xhat: Tensor, gamma: Tensor, params: RanParams, activation: str = "relu"
) -> Tensor:
    """Reweight the predicted journey and project it; clamped non-negative by default."""
    T = xhat.shape[1]
    z = nm.add(nm.matmul(params.w_ran, nm.mul(gamma, xhat)), nm.tile_cols(params.b_ran, T))
    if activation == "relu":
        return nm.relu(z)
    if activation == "identity":
        return z
    raise ValueError(f"unknown ran activation {activation!r}")


def combine(xhat_reg: Tensor, X: np.ndarray, M: np.ndarray) -> Tensor:
    """Real values where observed, regularized predictions where missing."""
    if X.shape != M.shape or xhat_reg.shape != X.shape:
        raise nm.DimensionError(
            f"combine shapes xhat {xhat_reg.shape}, X {X.shape}, M {M.shape}"
        )
    observed = nm.constant(np.where(M == 1.0, X, 0.0))
    return nm.add(observed, nm.mul(nm.constant(1.0 - M), xhat_reg))
