"""Prefill, feature embedding, GRU latent model, and the imputation mixture head.

Orientation convention throughout: features are rows, time steps are columns,
vectors are (n, 1) column matrices. Per-component mixture outputs are stacked
vertically, so rows [k*N, (k+1)*N) of a stacked matrix belong to component k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .data import Journey
from .numerics import Tensor


@dataclass
class ImputerParams:
    """All trainable tensors of the imputation path."""

    z_fill: Tensor  # (N, 1) learnable prefill, one value per feature
    w_emb: Tensor  # (d_emb, N)
    b_emb: Tensor  # (d_emb, 1)
    w_reset: Tensor  # (g, g + d_emb)
    b_reset: Tensor  # (g, 1)
    w_update: Tensor  # (g, g + d_emb)
    b_update: Tensor  # (g, 1)
    w_cand: Tensor  # (g, g + d_emb)
    b_cand: Tensor  # (g, 1)
    w_hidden: Tensor  # (d_h, g)
    b_hidden: Tensor  # (d_h, 1)
    w_weight: Tensor  # (K, d_h) mixture-weight head
    b_weight: Tensor  # (K, 1)
    w_mean: list[Tensor]  # K x (N, d_h)
    b_mean: list[Tensor]  # K x (N, 1)
    w_var: list[Tensor]  # K x (N, d_h)
    b_var: list[Tensor]  # K x (N, 1)
    w_proj: Tensor  # (d_emb, N) reconstruction projection

    @property
    def n_features(self) -> int:
        return self.z_fill.shape[0]

    @property
    def n_components(self) -> int:
        return self.w_weight.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.w_hidden.shape[1]

    def named(self) -> dict[str, Tensor]:
        out = {
            "z_fill": self.z_fill,
            "w_emb": self.w_emb,
            "b_emb": self.b_emb,
            "w_reset": self.w_reset,
            "b_reset": self.b_reset,
            "w_update": self.w_update,
            "b_update": self.b_update,
            "w_cand": self.w_cand,
            "b_cand": self.b_cand,
            "w_hidden": self.w_hidden,
            "b_hidden": self.b_hidden,
            "w_weight": self.w_weight,
            "b_weight": self.b_weight,
            "w_proj": self.w_proj,
        }
        for k in range(self.n_components):
            out[f"w_mean_{k}"] = self.w_mean[k]
            out[f"b_mean_{k}"] = self.b_mean[k]
            out[f"w_var_{k}"] = self.w_var[k]
            out[f"b_var_{k}"] = self.b_var[k]
        return out


def init_imputer(
    n_features: int, d_emb: int, g: int, d_h: int, K: int, rng: np.random.Generator
) -> ImputerParams:
    """Gaussian(0, 0.1) weights, zero biases, standard-Gaussian prefill."""

    def w(*shape):
        return nm.parameter(rng.normal(0.0, 0.1, size=shape))

    def b(*shape):
        return nm.parameter(np.zeros(shape))

    return ImputerParams(
        z_fill=nm.parameter(rng.standard_normal((n_features, 1))),
        w_emb=w(d_emb, n_features),
        b_emb=b(d_emb, 1),
        w_reset=w(g, g + d_emb),
        b_reset=b(g, 1),
        w_update=w(g, g + d_emb),
        b_update=b(g, 1),
        w_cand=w(g, g + d_emb),
        b_cand=b(g, 1),
        w_hidden=w(d_h, g),
        b_hidden=b(d_h, 1),
        w_weight=w(K, d_h),
        b_weight=b(K, 1),
        w_mean=[w(n_features, d_h) for _ in range(K)],
        b_mean=[b(n_features, 1) for _ in range(K)],
        w_var=[w(n_features, d_h) for _ in range(K)],
        b_var=[b(n_features, 1) for _ in range(K)],
        w_proj=w(d_emb, n_features),
    )


@dataclass(frozen=True)
class MixtureParams:
    """One time step's mixture, numpy form (analysis and tests)."""

    beta: np.ndarray  # (K,)
    mu: np.ndarray  # (K, N)
    sigma2: np.ndarray  # (K, N)


@dataclass
class ImputationResult:
    """Everything the imputation path produced for one journey.

    Tensor fields stay on the recording tape so downstream losses keep
    gradient flow; ``mixture_at`` exposes a step's mixture in numpy form.
    """

    xhat: Tensor  # (N, T)
    mixed_var: Tensor  # (N, T)
    H: Tensor  # (g, T)
    x_emb: Tensor  # (d_emb, T) embedding of the prefilled journey
    beta: Tensor  # (K, T)
    mu_all: Tensor  # (K*N, T)
    sigma2_all: Tensor  # (K*N, T)

    def mixture_at(self, t: int) -> MixtureParams:
        K = self.beta.shape[0]
        N = self.xhat.shape[0]
        return MixtureParams(
            beta=self.beta.data[:, t].copy(),
            mu=self.mu_all.data[:, t].reshape(K, N).copy(),
            sigma2=self.sigma2_all.data[:, t].reshape(K, N).copy(),
        )


# ---------------------------------------------------------------------------
# forward pieces


def prefill(X: np.ndarray, M: np.ndarray, z_fill: Tensor) -> Tensor:
    """Observed cells pass through; missing cells take the learnable prefill."""
    if X.shape != M.shape:
        raise nm.DimensionError(f"prefill shapes X {X.shape} vs M {M.shape}")
    if z_fill.shape != (X.shape[0], 1):
        raise nm.DimensionError(f"prefill z {z_fill.shape} vs {X.shape[0]} features")
    T = X.shape[1]
    observed = nm.constant(np.where(M == 1.0, X, 0.0))
    hole = nm.constant(1.0 - M)
    return nm.add(observed, nm.mul(nm.tile_cols(z_fill, T), hole))


def embed(x_prefilled: Tensor, params: ImputerParams) -> Tensor:
    T = x_prefilled.shape[1]
    return nm.add(nm.matmul(params.w_emb, x_prefilled), nm.tile_cols(params.b_emb, T))


def gru_step(x_t: Tensor, h_prev: Tensor, params: ImputerParams) -> Tensor:
    """One gated-recurrence step; gate input order is [h_prev, x_t].

    Columns evolve independently, so a (d_emb, B) input advances B parallel
    sequences in lockstep.
    """
    width = x_t.shape[1]

    def bias(b: Tensor) -> Tensor:
        return b if width == 1 else nm.tile_cols(b, width)

    hx = nm.concat_rows([h_prev, x_t])
    r = nm.sigmoid(nm.add(nm.matmul(params.w_reset, hx), bias(params.b_reset)))
    u = nm.sigmoid(nm.add(nm.matmul(params.w_update, hx), bias(params.b_update)))
    rhx = nm.concat_rows([nm.mul(r, h_prev), x_t])
    h_cand = nm.tanh(nm.add(nm.matmul(params.w_cand, rhx), bias(params.b_cand)))
    return nm.add(nm.mul(u, h_prev), nm.mul(nm.sub(1.0, u), h_cand))


def gru_sequence(x_emb: Tensor, params: ImputerParams, n_streams: int = 1) -> Tensor:
    """Run the recurrence over columns; h_0 is the zero vector.

    With ``n_streams`` > 1 the input holds that many parallel sequences in
    step-major layout (columns [t*n_streams, (t+1)*n_streams) are step t), and
    the output keeps the same layout.
    """
    total = x_emb.shape[1]
    if total % n_streams:
        raise nm.DimensionError(f"{total} columns not divisible into {n_streams} streams")
    g = params.w_reset.shape[0]
    h = nm.constant(np.zeros((g, n_streams)))
    cols = []
    for t in range(total // n_streams):
        h = gru_step(nm.slice_cols(x_emb, t * n_streams, (t + 1) * n_streams), h, params)
        cols.append(h)
    return nm.concat_cols(cols)


def mdn_head(h: Tensor, params: ImputerParams) -> tuple[Tensor, Tensor, Tensor]:
    """Mixture parameters for every column of ``h``.

    Returns (beta, mu_all, sigma2_all) with shapes (K, T), (K*N, T), (K*N, T);
    beta columns are softmax-normalized, variances strictly positive.
    """
    T = h.shape[1]
    hidden = nm.relu(nm.add(nm.matmul(params.w_hidden, h), nm.tile_cols(params.b_hidden, T)))
    beta = nm.softmax(
        nm.add(nm.matmul(params.w_weight, hidden), nm.tile_cols(params.b_weight, T)), axis=0
    )
    w_mu = nm.concat_rows(params.w_mean)
    b_mu = nm.concat_rows(params.b_mean)
    mu_all = nm.add(nm.matmul(w_mu, hidden), nm.tile_cols(b_mu, T))
    w_var = nm.concat_rows(params.w_var)
    b_var = nm.concat_rows(params.b_var)
    sigma2_all = nm.elu_offset(nm.add(nm.matmul(w_var, hidden), nm.tile_cols(b_var, T)))
    return beta, mu_all, sigma2_all


def _mix_components(beta: Tensor, stacked: Tensor, n_features: int) -> Tensor:
    """Sum_k beta_k * block_k where block_k is rows [k*N, (k+1)*N) of stacked."""
    K = beta.shape[0]
    total = None
    for k in range(K):
        w_k = nm.tile_rows(nm.slice_rows(beta, k, k + 1), n_features)
        block = nm.slice_rows(stacked, k * n_features, (k + 1) * n_features)
        term = nm.mul(w_k, block)
        total = term if total is None else nm.add(total, term)
    return total


def mixture_sample_tensors(
    beta: Tensor, mu_all: Tensor, sigma2_all: Tensor, xi: np.ndarray
) -> Tensor:
    """Reparameterized draw pooled over components: sum_k beta_k (mu_k + sigma_k*xi_k)."""
    n_features = mu_all.shape[0] // beta.shape[0]
    noisy = nm.add(mu_all, nm.mul(nm.sqrt(sigma2_all), nm.constant(xi)))
    return _mix_components(beta, noisy, n_features)


def mixed_variance_tensors(beta: Tensor, sigma2_all: Tensor) -> Tensor:
    """Variance proxy per cell: sum_k beta_k * sigma2_k."""
    n_features = sigma2_all.shape[0] // beta.shape[0]
    return _mix_components(beta, sigma2_all, n_features)


def mixture_sample(mp: MixtureParams, xi: np.ndarray) -> np.ndarray:
    """Step-level sampling on numpy mixture params; deterministic given xi."""
    K, N = mp.mu.shape
    beta = nm.constant(mp.beta.reshape(K, 1))
    mu = nm.constant(mp.mu.reshape(K * N, 1))
    sigma2 = nm.constant(mp.sigma2.reshape(K * N, 1))
    out = mixture_sample_tensors(beta, mu, sigma2, np.asarray(xi, dtype=np.float64).reshape(K * N, 1))
    return out.data.reshape(N)


def mixed_variance(mp: MixtureParams) -> np.ndarray:
    K, N = mp.sigma2.shape
    beta = nm.constant(mp.beta.reshape(K, 1))
    sigma2 = nm.constant(mp.sigma2.reshape(K * N, 1))
    return mixed_variance_tensors(beta, sigma2).data.reshape(N)


def draw_xi(
    rng: np.random.Generator | None, K: int, n_features: int, T: int, mode: str = "independent"
) -> np.ndarray:
    """Noise block for one journey: zeros when rng is None (deterministic path)."""
    if rng is None:
        return np.zeros((K * n_features, T))
    if mode == "independent":
        return rng.standard_normal((K * n_features, T))
    if mode == "shared":
        one = rng.standard_normal((n_features, T))
        return np.tile(one, (K, 1))
    raise ValueError(f"unknown xi mode {mode!r}")


def impute_journey(
    journey: Journey,
    params: ImputerParams,
    rng: np.random.Generator | None = None,
    xi_mode: str = "independent",
) -> ImputationResult:
    """Full imputation pass over one (normalized) journey.

    With ``rng`` None the noise is fixed to zeros, making the pass a
    deterministic function of the parameters (the mode every gradient check
    and metric evaluation uses).
    """
    x_pre = prefill(journey.X, journey.M, params.z_fill)
    x_emb = embed(x_pre, params)
    H = gru_sequence(x_emb, params)
    beta, mu_all, sigma2_all = mdn_head(H, params)
    xi = draw_xi(rng, params.n_components, params.n_features, journey.T, xi_mode)
    xhat = mixture_sample_tensors(beta, mu_all, sigma2_all, xi)
    mixed = mixed_variance_tensors(beta, sigma2_all)
    return ImputationResult(
        xhat=xhat,
        mixed_var=mixed,
        H=H,
        x_emb=x_emb,
        beta=beta,
        mu_all=mu_all,
        sigma2_all=sigma2_all,
    )


def imputation_loss(xhat: Tensor, x_emb: Tensor, w_proj: Tensor) -> Tensor:
    """Mean squared error between the projected reconstruction and the embedding."""
    projected = nm.matmul(w_proj, xhat)
    if projected.shape != x_emb.shape:
        raise nm.DimensionError(f"loss shapes {projected.shape} vs {x_emb.shape}")
    diff = nm.sub(projected, x_emb)
    return nm.mean_all(nm.mul(diff, diff))


def masked_mse(xhat: Tensor, journey: Journey) -> Tensor:
    """Raw-feature-space MSE over observed cells only (optional auxiliary loss)."""
    observed = nm.constant(np.where(journey.M == 1.0, journey.X, 0.0))
    mask = nm.constant(journey.M)
    diff = nm.mul(nm.sub(xhat, observed), mask)
    denom = max(float(journey.M.sum()), 1.0)
    return nm.mul(nm.sum_all(nm.mul(diff, diff)), 1.0 / denom)
