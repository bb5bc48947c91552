"""Temporal attention pooling, the predictor mixture head, and the objective.

The pooled journey representation feeds a mixture head whose component means
and variances live in 2-dimensional class-logit space; class probabilities
come from a softmax over the beta-pooled (optionally noise-perturbed) logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nm
from .numerics import Tensor

N_CLASSES = 2
PROB_FLOOR = 1e-12


class LabelError(ValueError):
    """A label fell outside {0, 1}."""


@dataclass
class PredictorParams:
    w_tau: Tensor  # (N, N) temporal attention
    b_tau: Tensor  # (N, 1)
    w_hidden: Tensor  # (d_z, N)
    b_hidden: Tensor  # (d_z, 1)
    w_weight: Tensor  # (K_p, d_z)
    b_weight: Tensor  # (K_p, 1)
    w_mean: list[Tensor]  # K_p x (2, d_z)
    b_mean: list[Tensor]  # K_p x (2, 1)
    w_var: list[Tensor]  # K_p x (2, d_z)
    b_var: list[Tensor]  # K_p x (2, 1)

    @property
    def n_components(self) -> int:
        return self.w_weight.shape[0]

    def named(self) -> dict[str, Tensor]:
        out = {
            "w_tau": self.w_tau,
            "b_tau": self.b_tau,
            "w_hidden": self.w_hidden,
            "b_hidden": self.b_hidden,
            "w_weight": self.w_weight,
            "b_weight": self.b_weight,
        }
        for k in range(self.n_components):
            out[f"w_mean_{k}"] = self.w_mean[k]
            out[f"b_mean_{k}"] = self.b_mean[k]
            out[f"w_var_{k}"] = self.w_var[k]
            out[f"b_var_{k}"] = self.b_var[k]
        return out


def init_predictor(
    n_features: int, d_z: int, K_p: int, rng: np.random.Generator
) -> PredictorParams:
    def w(*shape):
        return nm.parameter(rng.normal(0.0, 0.1, size=shape))

    def b(*shape):
        return nm.parameter(np.zeros(shape))

    return PredictorParams(
        w_tau=w(n_features, n_features),
        b_tau=b(n_features, 1),
        w_hidden=w(d_z, n_features),
        b_hidden=b(d_z, 1),
        w_weight=w(K_p, d_z),
        b_weight=b(K_p, 1),
        w_mean=[w(N_CLASSES, d_z) for _ in range(K_p)],
        b_mean=[b(N_CLASSES, 1) for _ in range(K_p)],
        w_var=[w(N_CLASSES, d_z) for _ in range(K_p)],
        b_var=[b(N_CLASSES, 1) for _ in range(K_p)],
    )


def temporal_attention(x_combined: Tensor, params: PredictorParams) -> tuple[Tensor, Tensor]:
    """Pool the combined journey over time.

    tau is softmax-normalized along the time axis per feature; the overall
    representation is the tau-weighted sum of the columns, an (N, 1) vector.
    """
    if x_combined.data.ndim != 2:
        raise nm.DimensionError(f"temporal_attention needs (N, T), got {x_combined.shape}")
    T = x_combined.shape[1]
    scores = nm.add(nm.matmul(params.w_tau, x_combined), nm.tile_cols(params.b_tau, T))
    tau = nm.softmax(scores, axis=1)
    x_overall = nm.sum_axis(nm.mul(tau, x_combined), axis=1, keepdims=True)
    return tau, x_overall


def predictor_mdn(x_overall: Tensor, params: PredictorParams) -> tuple[Tensor, Tensor, Tensor]:
    """Mixture over class logits: (beta_p (K_p,1), mu (2*K_p,1), sigma2 (2*K_p,1))."""
    z = nm.relu(nm.add(nm.matmul(params.w_hidden, x_overall), params.b_hidden))
    beta = nm.softmax(nm.add(nm.matmul(params.w_weight, z), params.b_weight), axis=0)
    mu = nm.add(nm.matmul(nm.concat_rows(params.w_mean), z), nm.concat_rows(params.b_mean))
    sigma2 = nm.elu_offset(
        nm.add(nm.matmul(nm.concat_rows(params.w_var), z), nm.concat_rows(params.b_var))
    )
    return beta, mu, sigma2


def class_sample(
    beta: Tensor, mu: Tensor, sigma2: Tensor, eta: np.ndarray | None
) -> Tensor:
    """Class probabilities from a noise-perturbed, beta-pooled logit draw.

    ``eta`` is a (K_p, 2) standard-normal block, or None for the mean path;
    the output is a (2, 1) probability column, deterministic given eta.
    """
    K_p = beta.shape[0]
    if eta is None:
        eta = np.zeros((K_p, N_CLASSES))
    eta_col = np.asarray(eta, dtype=np.float64).reshape(K_p * N_CLASSES, 1)
    logits = nm.add(mu, nm.mul(nm.sqrt(sigma2), nm.constant(eta_col)))
    per_comp = nm.transpose(nm.reshape(logits, (K_p, N_CLASSES)))  # (2, K_p)
    pooled = nm.matmul(per_comp, beta)  # (2, 1)
    return nm.softmax(pooled, axis=0)


def class_weights_for(labels: Sequence[int]) -> tuple[float, float]:
    """Inverse class frequency weights: w_c = n_total / (2 * n_c)."""
    labels = list(labels)
    n0 = labels.count(0)
    n1 = labels.count(1)
    if n0 == 0 or n1 == 0:
        raise LabelError("class weights need both classes present")
    total = n0 + n1
    return total / (2.0 * n0), total / (2.0 * n1)


def cross_entropy(
    yhats: Sequence[Tensor],
    labels: Sequence[int],
    class_weights: tuple[float, float] = (1.0, 1.0),
) -> Tensor:
    """Weighted mean over the batch of -log p(label), probabilities clipped.

    Per-sample weight is class_weights[label]; the mean is normalized by the
    total weight, so equal weights reduce to the plain average.
    """
    if len(yhats) != len(labels):
        raise nm.DimensionError(f"{len(yhats)} predictions vs {len(labels)} labels")
    total = None
    weight_sum = 0.0
    for yhat, label in zip(yhats, labels):
        if label not in (0, 1):
            raise LabelError(f"label {label!r} outside {{0, 1}}")
        onehot = np.zeros((N_CLASSES, 1))
        onehot[label, 0] = 1.0
        picked = nm.sum_all(nm.mul(yhat, nm.constant(onehot)))
        clipped = nm.clip(picked, PROB_FLOOR, 1.0 - PROB_FLOOR)
        w = class_weights[label]
        term = nm.mul(nm.neg(nm.log(clipped)), w)
        total = term if total is None else nm.add(total, term)
        weight_sum += w
    return nm.mul(total, 1.0 / weight_sum)
