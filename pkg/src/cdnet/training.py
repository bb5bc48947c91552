"""Joint end-to-end optimization, model variants, and checkpointing.

The full model trains under L_total = prediction cross-entropy + lambda *
imputation reconstruction loss. Variants for ablation:

* ``cdnet``       full model (imputation mixture + regularized attention)
* ``cdnet_beta``  keeps the imputation mixture, bypasses the attention regularizer
* ``cdnet_alpha`` deterministic linear readout of the recurrent state, no
                  mixture heads anywhere, plain feed-forward classifier
* ``mean_baseline`` mean-imputation (zero in normalized space) into a plain
                  recurrent classifier

Journeys inside a batch are processed individually (no padding) and their
losses averaged, so variable record counts need no masking.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import evaluation, imputer, numerics as nm, predictor, ran
from .data import Dataset, Journey
from .numerics import GradientTape, Tensor
from .seeds import named_rng

CHECKPOINT_MAGIC = b"CDN1"
CHECKPOINT_VERSION = 1
VARIANTS = ("cdnet", "cdnet_alpha", "cdnet_beta", "mean_baseline")


class TrainingError(RuntimeError):
    """Configuration or data made training impossible."""


class DivergenceError(TrainingError):
    """Loss went non-finite; message carries epoch/batch diagnostics."""


class CheckpointError(ValueError):
    """Checkpoint file is malformed, truncated, or version-incompatible."""


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.9
    lambda_imp: float = 1.0
    variant: str = "cdnet"
    d_emb: int = 32
    g: int = 64
    d_h: int = 64
    K: int = 5
    d_z: int = 64
    K_p: int = 100
    patience: int = 10
    xi_mode: str = "independent"
    ran_activation: str = "relu"
    aux_masked_mse: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise TrainingError(f"unknown variant {self.variant!r}; known: {VARIANTS}")
        for name in ("d_emb", "g", "d_h", "K", "d_z", "K_p", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise TrainingError(f"{name} must be positive")
        if self.lambda_imp < 0:
            raise TrainingError("lambda_imp must be >= 0")
        if self.learning_rate <= 0:
            raise TrainingError("learning_rate must be positive")
        if self.xi_mode not in ("independent", "shared"):
            raise TrainingError(f"unknown xi_mode {self.xi_mode!r}")
        if self.ran_activation not in ("relu", "identity"):
            raise TrainingError(f"unknown ran_activation {self.ran_activation!r}")


# ---------------------------------------------------------------------------
# variant parameter blocks not covered by the main modules


@dataclass
class AlphaReadoutParams:
    """Deterministic linear readout replacing the imputation mixture head."""

    z_fill: Tensor
    w_emb: Tensor
    b_emb: Tensor
    w_reset: Tensor
    b_reset: Tensor
    w_update: Tensor
    b_update: Tensor
    w_cand: Tensor
    b_cand: Tensor
    w_readout: Tensor  # (N, g)
    b_readout: Tensor  # (N, 1)
    w_proj: Tensor  # (d_emb, N)

    def named(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class AlphaClassifierParams:
    """Attention pooling plus a plain feed-forward softmax classifier."""

    w_tau: Tensor
    b_tau: Tensor
    w_hidden: Tensor
    b_hidden: Tensor
    w_cls: Tensor  # (2, d_z)
    b_cls: Tensor  # (2, 1)

    def named(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class BaselineParams:
    """Plain recurrent classifier over mean-imputed raw features."""

    w_reset: Tensor
    b_reset: Tensor
    w_update: Tensor
    b_update: Tensor
    w_cand: Tensor
    b_cand: Tensor
    w_cls: Tensor  # (2, g)
    b_cls: Tensor  # (2, 1)

    def named(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class JourneyForward:
    """Products of one journey's forward pass (tensors stay on the tape)."""

    yhat: Tensor  # (2, 1) class probabilities
    imp_loss: Tensor | None = None
    imputation: imputer.ImputationResult | None = None
    phi: Tensor | None = None
    gamma: Tensor | None = None
    x_combined: Tensor | None = None
    tau: Tensor | None = None
    x_overall: Tensor | None = None
    pred_mixture: tuple[Tensor, Tensor, Tensor] | None = None  # (beta, mu, sigma2)


class Model:
    """A variant's parameter set plus its forward composition."""

    def __init__(self, cfg: TrainConfig, n_features: int):
        self.cfg = cfg
        self.variant = cfg.variant
        self.n_features = n_features
        self.imputer: imputer.ImputerParams | None = None
        self.alpha: AlphaReadoutParams | None = None
        self.ran: ran.RanParams | None = None
        self.predictor: predictor.PredictorParams | None = None
        self.alpha_cls: AlphaClassifierParams | None = None
        self.baseline: BaselineParams | None = None

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        blocks = (
            ("imputer", self.imputer),
            ("imputer", self.alpha),
            ("ran", self.ran),
            ("predictor", self.predictor),
            ("predictor", self.alpha_cls),
            ("model", self.baseline),
        )
        for prefix, block in blocks:
            if block is not None:
                for name, tensor in block.named().items():
                    out[f"{prefix}.{name}"] = tensor
        return out

    # -- forward ------------------------------------------------------------

    def forward_journey(
        self,
        journey: Journey,
        xi_rng: np.random.Generator | None = None,
        eta_rng: np.random.Generator | None = None,
        want_imp_loss: bool = True,
    ) -> JourneyForward:
        if self.variant in ("cdnet", "cdnet_beta"):
            return self._forward_mdn(journey, xi_rng, eta_rng, want_imp_loss)
        if self.variant == "cdnet_alpha":
            return self._forward_alpha(journey, want_imp_loss)
        return self._forward_baseline(journey)

    def _forward_mdn(self, journey, xi_rng, eta_rng, want_imp_loss) -> JourneyForward:
        imp = imputer.impute_journey(journey, self.imputer, xi_rng, self.cfg.xi_mode)
        phi = gamma = None
        if self.variant == "cdnet":
            phi = ran.unreliability(journey.M, imp.mixed_var)
            gamma = ran.attention_weights(phi, self.ran)
            x_reg = ran.regularize(imp.xhat, gamma, self.ran, self.cfg.ran_activation)
        else:
            x_reg = imp.xhat
        x_comb = ran.combine(x_reg, journey.X, journey.M)
        tau, x_overall = predictor.temporal_attention(x_comb, self.predictor)
        beta_p, mu_p, sigma2_p = predictor.predictor_mdn(x_overall, self.predictor)
        eta = None
        if eta_rng is not None:
            eta = eta_rng.standard_normal((self.cfg.K_p, predictor.N_CLASSES))
        yhat = predictor.class_sample(beta_p, mu_p, sigma2_p, eta)
        imp_loss = None
        if want_imp_loss:
            imp_loss = imputer.imputation_loss(imp.xhat, imp.x_emb, self.imputer.w_proj)
            if self.cfg.aux_masked_mse:
                imp_loss = nm.add(imp_loss, imputer.masked_mse(imp.xhat, journey))
        return JourneyForward(
            yhat=yhat,
            imp_loss=imp_loss,
            imputation=imp,
            phi=phi,
            gamma=gamma,
            x_combined=x_comb,
            tau=tau,
            x_overall=x_overall,
            pred_mixture=(beta_p, mu_p, sigma2_p),
        )

    def _forward_alpha(self, journey, want_imp_loss) -> JourneyForward:
        p = self.alpha
        x_pre = imputer.prefill(journey.X, journey.M, p.z_fill)
        x_emb = imputer.embed(x_pre, p)
        H = imputer.gru_sequence(x_emb, p)
        xhat = nm.add(nm.matmul(p.w_readout, H), nm.tile_cols(p.b_readout, journey.T))
        x_comb = ran.combine(xhat, journey.X, journey.M)
        tau, x_overall = predictor.temporal_attention(x_comb, self.alpha_cls)
        z = nm.relu(nm.add(nm.matmul(self.alpha_cls.w_hidden, x_overall), self.alpha_cls.b_hidden))
        logits = nm.add(nm.matmul(self.alpha_cls.w_cls, z), self.alpha_cls.b_cls)
        yhat = nm.softmax(logits, axis=0)
        imp_loss = None
        if want_imp_loss:
            imp_loss = imputer.imputation_loss(xhat, x_emb, p.w_proj)
            if self.cfg.aux_masked_mse:
                imp_loss = nm.add(imp_loss, imputer.masked_mse(xhat, journey))
        return JourneyForward(
            yhat=yhat,
            imp_loss=imp_loss,
            x_combined=x_comb,
            tau=tau,
            x_overall=x_overall,
        )

    def _forward_baseline(self, journey) -> JourneyForward:
        # Missing cells take the training mean, which is 0 in normalized space.
        filled = nm.constant(np.where(journey.M == 1.0, journey.X, 0.0))
        H = imputer.gru_sequence(filled, self.baseline)
        h_last = nm.slice_cols(H, journey.T - 1, journey.T)
        logits = nm.add(nm.matmul(self.baseline.w_cls, h_last), self.baseline.b_cls)
        yhat = nm.softmax(logits, axis=0)
        return JourneyForward(yhat=yhat, x_combined=filled)

    # -- lockstep batched inference ------------------------------------------

    def batch_scores(self, ds: Dataset, chunk: int = 256) -> np.ndarray:
        """Class-1 probability per journey, deterministic path, batched by length."""
        scores = np.empty(len(ds.journeys))
        for idxs in _length_groups(ds.journeys, chunk):
            fw = batch_forward(self, [ds.journeys[i] for i in idxs], None, None, False)
            scores[idxs] = fw.yhat.data[1, :]
        return scores

    def batch_overall(self, ds: Dataset, chunk: int = 256) -> np.ndarray:
        """Pooled (N,) representation per journey as a (P, N) matrix."""
        reps = np.empty((len(ds.journeys), self.n_features))
        for idxs in _length_groups(ds.journeys, chunk):
            fw = batch_forward(self, [ds.journeys[i] for i in idxs], None, None, False)
            if fw.x_overall is None:
                raise evaluation.CapabilityError(
                    f"variant {self.variant!r} has no pooled representation"
                )
            reps[idxs] = fw.x_overall.data.T
        return reps


def build_variant(cfg: TrainConfig, n_features: int, rng: np.random.Generator) -> Model:
    """Construct a freshly initialized model; parameter order is fixed per variant."""
    model = Model(cfg, n_features)
    if cfg.variant in ("cdnet", "cdnet_beta"):
        model.imputer = imputer.init_imputer(n_features, cfg.d_emb, cfg.g, cfg.d_h, cfg.K, rng)
        if cfg.variant == "cdnet":
            model.ran = ran.init_ran(n_features, rng)
        model.predictor = predictor.init_predictor(n_features, cfg.d_z, cfg.K_p, rng)
    elif cfg.variant == "cdnet_alpha":
        base = imputer.init_imputer(n_features, cfg.d_emb, cfg.g, cfg.d_h, 1, rng)
        model.alpha = AlphaReadoutParams(
            z_fill=base.z_fill,
            w_emb=base.w_emb,
            b_emb=base.b_emb,
            w_reset=base.w_reset,
            b_reset=base.b_reset,
            w_update=base.w_update,
            b_update=base.b_update,
            w_cand=base.w_cand,
            b_cand=base.b_cand,
            w_readout=nm.parameter(rng.normal(0.0, 0.1, size=(n_features, cfg.g))),
            b_readout=nm.parameter(np.zeros((n_features, 1))),
            w_proj=base.w_proj,
        )
        model.alpha_cls = AlphaClassifierParams(
            w_tau=nm.parameter(rng.normal(0.0, 0.1, size=(n_features, n_features))),
            b_tau=nm.parameter(np.zeros((n_features, 1))),
            w_hidden=nm.parameter(rng.normal(0.0, 0.1, size=(cfg.d_z, n_features))),
            b_hidden=nm.parameter(np.zeros((cfg.d_z, 1))),
            w_cls=nm.parameter(rng.normal(0.0, 0.1, size=(2, cfg.d_z))),
            b_cls=nm.parameter(np.zeros((2, 1))),
        )
    else:  # mean_baseline
        model.baseline = BaselineParams(
            w_reset=nm.parameter(rng.normal(0.0, 0.1, size=(cfg.g, cfg.g + n_features))),
            b_reset=nm.parameter(np.zeros((cfg.g, 1))),
            w_update=nm.parameter(rng.normal(0.0, 0.1, size=(cfg.g, cfg.g + n_features))),
            b_update=nm.parameter(np.zeros((cfg.g, 1))),
            w_cand=nm.parameter(rng.normal(0.0, 0.1, size=(cfg.g, cfg.g + n_features))),
            b_cand=nm.parameter(np.zeros((cfg.g, 1))),
            w_cls=nm.parameter(rng.normal(0.0, 0.1, size=(2, cfg.g))),
            b_cls=nm.parameter(np.zeros((2, 1))),
        )
    return model


def _length_groups(journeys, chunk: int) -> list[list[int]]:
    """Index groups of equal record count, order-stable, capped at chunk size."""
    by_len: dict[int, list[int]] = {}
    for idx, j in enumerate(journeys):
        by_len.setdefault(j.T, []).append(idx)
    groups = []
    for T in sorted(by_len):
        idxs = by_len[T]
        for c0 in range(0, len(idxs), chunk):
            groups.append(idxs[c0 : c0 + chunk])
    return groups


def _stack_step_major(journeys: list[Journey]) -> tuple[np.ndarray, np.ndarray]:
    """(N, T*B) raw values and mask; columns [t*B, (t+1)*B) hold step t."""
    X = np.stack([j.X for j in journeys], axis=2)  # (N, T, B)
    M = np.stack([j.M for j in journeys], axis=2)
    N, T, B = X.shape
    return X.reshape(N, T * B), M.reshape(N, T * B)


def _to_time_major(x: Tensor, T: int, B: int) -> Tensor:
    """(N, T*B) step-major -> (T, B*N); column b*N+i tracks (journey b, feature i)."""
    N = x.shape[0]
    return nm.reshape(nm.transpose(x), (T, B * N))


def _batch_pool_time(x_comb: Tensor, w_tau: Tensor, b_tau: Tensor, T: int, B: int) -> Tensor:
    """Temporal-attention pooling of a step-major batch; returns (N, B)."""
    N = x_comb.shape[0]
    scores = nm.add(nm.matmul(w_tau, x_comb), nm.tile_cols(b_tau, T * B))
    tau = nm.softmax(_to_time_major(scores, T, B), axis=0)
    weighted = nm.mul(tau, _to_time_major(x_comb, T, B))
    flat = nm.sum_axis(weighted, axis=0, keepdims=True)  # (1, B*N)
    return nm.transpose(nm.reshape(flat, (B, N)))


def _batch_class_sample(
    beta: Tensor, mu: Tensor, sigma2: Tensor, eta: np.ndarray | None
) -> Tensor:
    """class_sample over a batch: inputs (K_p, B)/(2K_p, B), output (2, B)."""
    K_p, B = beta.shape
    if eta is None:
        eta = np.zeros((predictor.N_CLASSES * K_p, B))
    logits = nm.add(mu, nm.mul(nm.sqrt(sigma2), nm.constant(eta)))
    # rows of (K_p, 2B) are components; columns c*B+b match concat_cols([beta, beta])
    weighted = nm.mul(nm.concat_cols([beta, beta]), nm.reshape(logits, (K_p, 2 * B)))
    pooled = nm.reshape(nm.sum_axis(weighted, axis=0, keepdims=True), (predictor.N_CLASSES, B))
    return nm.softmax(pooled, axis=0)


def _batch_cross_entropy(
    yhat: Tensor, labels: np.ndarray, class_weights: tuple[float, float]
) -> Tensor:
    B = yhat.shape[1]
    onehot = np.zeros((predictor.N_CLASSES, B))
    onehot[labels, np.arange(B)] = 1.0
    picked = nm.sum_axis(nm.mul(yhat, nm.constant(onehot)), axis=0, keepdims=True)
    clipped = nm.clip(picked, predictor.PROB_FLOOR, 1.0 - predictor.PROB_FLOOR)
    weights = np.where(labels == 1, class_weights[1], class_weights[0]).reshape(1, B)
    nll = nm.mul(nm.neg(nm.log(clipped)), nm.constant(weights))
    return nm.mul(nm.sum_all(nll), 1.0 / float(weights.sum()))


@dataclass
class BatchForward:
    yhat: Tensor  # (2, B)
    imp_loss: Tensor | None
    x_overall: Tensor | None  # (N, B)


def batch_forward(
    model: Model,
    journeys: list[Journey],
    xi_rng: np.random.Generator | None,
    eta_rng: np.random.Generator | None,
    want_imp_loss: bool,
) -> BatchForward:
    """Lockstep forward over equal-length journeys.

    Value-identical to running forward_journey per journey (all ops are
    column-local); only the noise-draw order differs, so pass fresh streams.
    """
    T = journeys[0].T
    if any(j.T != T for j in journeys):
        raise nm.DimensionError("batch_forward needs equal record counts")
    B = len(journeys)
    cfg = model.cfg
    X_all, M_all = _stack_step_major(journeys)

    if model.variant == "mean_baseline":
        filled = nm.constant(np.where(M_all == 1.0, X_all, 0.0))
        H = imputer.gru_sequence(filled, model.baseline, n_streams=B)
        h_last = nm.slice_cols(H, (T - 1) * B, T * B)
        logits = nm.add(
            nm.matmul(model.baseline.w_cls, h_last), nm.tile_cols(model.baseline.b_cls, B)
        )
        return BatchForward(yhat=nm.softmax(logits, axis=0), imp_loss=None, x_overall=None)

    if model.variant == "cdnet_alpha":
        p = model.alpha
        x_pre = imputer.prefill(X_all, M_all, p.z_fill)
        x_emb = imputer.embed(x_pre, p)
        H = imputer.gru_sequence(x_emb, p, n_streams=B)
        xhat = nm.add(nm.matmul(p.w_readout, H), nm.tile_cols(p.b_readout, T * B))
        x_comb = ran.combine(xhat, X_all, M_all)
        x_overall = _batch_pool_time(x_comb, model.alpha_cls.w_tau, model.alpha_cls.b_tau, T, B)
        z = nm.relu(
            nm.add(
                nm.matmul(model.alpha_cls.w_hidden, x_overall),
                nm.tile_cols(model.alpha_cls.b_hidden, B),
            )
        )
        logits = nm.add(
            nm.matmul(model.alpha_cls.w_cls, z), nm.tile_cols(model.alpha_cls.b_cls, B)
        )
        yhat = nm.softmax(logits, axis=0)
        imp_loss = None
        if want_imp_loss:
            imp_loss = imputer.imputation_loss(xhat, x_emb, p.w_proj)
            if cfg.aux_masked_mse:
                imp_loss = nm.add(imp_loss, _batch_masked_mse(xhat, X_all, M_all, B))
        return BatchForward(yhat=yhat, imp_loss=imp_loss, x_overall=x_overall)

    # cdnet / cdnet_beta
    ip = model.imputer
    x_pre = imputer.prefill(X_all, M_all, ip.z_fill)
    x_emb = imputer.embed(x_pre, ip)
    H = imputer.gru_sequence(x_emb, ip, n_streams=B)
    beta, mu_all, sigma2_all = imputer.mdn_head(H, ip)
    xi = imputer.draw_xi(xi_rng, cfg.K, model.n_features, T * B, cfg.xi_mode)
    xhat = imputer.mixture_sample_tensors(beta, mu_all, sigma2_all, xi)
    if model.variant == "cdnet":
        mixed = imputer.mixed_variance_tensors(beta, sigma2_all)
        phi = ran.unreliability(M_all, mixed)
        gamma = ran.attention_weights(phi, model.ran)
        x_reg = ran.regularize(xhat, gamma, model.ran, cfg.ran_activation)
    else:
        x_reg = xhat
    x_comb = ran.combine(x_reg, X_all, M_all)
    x_overall = _batch_pool_time(x_comb, model.predictor.w_tau, model.predictor.b_tau, T, B)
    z = nm.relu(
        nm.add(
            nm.matmul(model.predictor.w_hidden, x_overall),
            nm.tile_cols(model.predictor.b_hidden, B),
        )
    )
    beta_p = nm.softmax(
        nm.add(nm.matmul(model.predictor.w_weight, z), nm.tile_cols(model.predictor.b_weight, B)),
        axis=0,
    )
    mu_p = nm.add(
        nm.matmul(nm.concat_rows(model.predictor.w_mean), z),
        nm.tile_cols(nm.concat_rows(model.predictor.b_mean), B),
    )
    sigma2_p = nm.elu_offset(
        nm.add(
            nm.matmul(nm.concat_rows(model.predictor.w_var), z),
            nm.tile_cols(nm.concat_rows(model.predictor.b_var), B),
        )
    )
    eta = None
    if eta_rng is not None:
        eta = eta_rng.standard_normal((predictor.N_CLASSES * cfg.K_p, B))
    yhat = _batch_class_sample(beta_p, mu_p, sigma2_p, eta)
    imp_loss = None
    if want_imp_loss:
        imp_loss = imputer.imputation_loss(xhat, x_emb, ip.w_proj)
        if cfg.aux_masked_mse:
            imp_loss = nm.add(imp_loss, _batch_masked_mse(xhat, X_all, M_all, B))
    return BatchForward(yhat=yhat, imp_loss=imp_loss, x_overall=x_overall)


def _batch_masked_mse(xhat: Tensor, X_all: np.ndarray, M_all: np.ndarray, B: int) -> Tensor:
    """Batch mean of per-journey masked MSE via per-cell weights."""
    N, total = M_all.shape
    T = total // B
    counts = M_all.reshape(N, T, B).sum(axis=(0, 1))  # observed cells per journey
    denom = B * np.maximum(counts, 1.0)
    w = M_all / denom[np.arange(total) % B][None, :]
    diff = nm.sub(xhat, nm.constant(np.where(M_all == 1.0, X_all, 0.0)))
    return nm.sum_all(nm.mul(nm.mul(diff, diff), nm.constant(w)))


def batch_loss(
    model: Model,
    journeys: list[Journey],
    class_weights: tuple[float, float],
    xi_rng: np.random.Generator | None,
    eta_rng: np.random.Generator | None,
) -> Tensor:
    """Weighted cross-entropy plus lambda * mean imputation loss over the batch.

    Equal-length batches run on the lockstep path; mixed lengths fall back to
    per-journey forwards (identical math, one journey at a time).
    """
    want_imp = model.cfg.lambda_imp > 0
    labels = np.array([j.y for j in journeys])
    if len({j.T for j in journeys}) == 1:
        fw = batch_forward(model, journeys, xi_rng, eta_rng, want_imp)
        total = _batch_cross_entropy(fw.yhat, labels, class_weights)
        if fw.imp_loss is not None:
            total = nm.add(total, nm.mul(fw.imp_loss, model.cfg.lambda_imp))
        return total

    yhats, imp_losses = [], []
    for j in journeys:
        fw = model.forward_journey(j, xi_rng, eta_rng, want_imp_loss=want_imp)
        yhats.append(fw.yhat)
        if fw.imp_loss is not None:
            imp_losses.append(fw.imp_loss)
    total = predictor.cross_entropy(yhats, labels, class_weights)
    if imp_losses:
        imp_sum = imp_losses[0]
        for term in imp_losses[1:]:
            imp_sum = nm.add(imp_sum, term)
        total = nm.add(total, nm.mul(imp_sum, model.cfg.lambda_imp / len(imp_losses)))
    return total


class SGD:
    """Momentum SGD: v <- momentum*v + grad; p <- p - lr*v."""

    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, grads: dict[Tensor, np.ndarray]) -> None:
        for name, t in self.params.items():
            v = self.velocity[name]
            v *= self.momentum
            v += grads[t]
            t.data -= self.lr * v


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_auroc: float
    val_auprc: float


@dataclass(frozen=True)
class ModelCheckpoint:
    version: int
    variant: str
    n_features: int
    feature_names: tuple[str, ...]
    params: dict[str, np.ndarray]
    config: TrainConfig
    norm_stats: tuple[tuple[float, float], ...]
    val_metrics: dict[str, float]


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    log: list[EpochLog]
    model: Model


def train(cfg: TrainConfig, train_ds: Dataset, val_ds: Dataset) -> TrainResult:
    """Optimize all parameters jointly; return the best-validation checkpoint.

    Deterministic under cfg.seed: init, noise draws, and shuffling each come
    from their own named stream. Early stopping watches validation AUROC with
    cfg.patience epochs of grace.
    """
    if train_ds.norm_stats is None:
        raise TrainingError("train() expects normalized datasets (run normalize first)")
    model = build_variant(cfg, len(train_ds.feature_names), named_rng(cfg.seed, "init"))
    params = model.parameters()
    class_weights = predictor.class_weights_for(train_ds.labels())
    xi_rng = named_rng(cfg.seed, "xi")
    eta_rng = named_rng(cfg.seed, "eta")
    shuffle_rng = named_rng(cfg.seed, "shuffle")
    opt = SGD(params, cfg.learning_rate, cfg.momentum)

    best_auroc = -np.inf
    best_snapshot: dict[str, np.ndarray] | None = None
    best_metrics: dict[str, float] = {}
    stale = 0
    log: list[EpochLog] = []

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_ds.journeys))
        losses = []
        for b0 in range(0, len(order), cfg.batch_size):
            batch = [train_ds.journeys[i] for i in order[b0 : b0 + cfg.batch_size]]
            with GradientTape() as tape:
                tape.watch(*params.values())
                loss = batch_loss(model, batch, class_weights, xi_rng, eta_rng)
            if not np.isfinite(loss.data):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {b0 // cfg.batch_size}"
                )
            grads = tape.backward(loss)
            opt.step(grads)
            losses.append(loss.item())

        scores = evaluation.predict_scores(model, val_ds)
        val_auroc = evaluation.auroc(scores, val_ds.labels())
        val_auprc = evaluation.auprc(scores, val_ds.labels())
        log.append(EpochLog(epoch, float(np.mean(losses)), val_auroc, val_auprc))

        if val_auroc > best_auroc:
            best_auroc = val_auroc
            best_snapshot = {name: t.data.copy() for name, t in params.items()}
            best_metrics = {"val_auroc": val_auroc, "val_auprc": val_auprc}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    for name, t in params.items():
        t.data = best_snapshot[name].copy()
    checkpoint = ModelCheckpoint(
        version=CHECKPOINT_VERSION,
        variant=cfg.variant,
        n_features=model.n_features,
        feature_names=train_ds.feature_names,
        params={name: t.data.copy() for name, t in params.items()},
        config=cfg,
        norm_stats=train_ds.norm_stats,
        val_metrics=best_metrics,
    )
    return TrainResult(checkpoint=checkpoint, log=log, model=model)


def model_from_checkpoint(ckpt: ModelCheckpoint) -> Model:
    """Rebuild a model and load the stored tensors; shapes must match exactly."""
    model = build_variant(ckpt.config, ckpt.n_features, named_rng(ckpt.config.seed, "init"))
    params = model.parameters()
    if set(params) != set(ckpt.params):
        raise CheckpointError(
            f"parameter names mismatch: {sorted(set(params) ^ set(ckpt.params))}"
        )
    for name, t in params.items():
        stored = ckpt.params[name]
        if stored.shape != t.data.shape:
            raise CheckpointError(
                f"{name}: checkpoint shape {stored.shape} vs config shape {t.data.shape}"
            )
        t.data = stored.copy()
    return model


# ---------------------------------------------------------------------------
# on-disk checkpoint format


def _config_lines(cfg: TrainConfig) -> list[str]:
    out = []
    for f in sorted(fields(cfg), key=lambda f: f.name):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            out.append(f"{f.name}={'true' if v else 'false'}")
        elif isinstance(v, float):
            out.append(f"{f.name}={v!r}")
        else:
            out.append(f"{f.name}={v}")
    return out


def _parse_config(lines: list[str]) -> TrainConfig:
    kinds = {f.name: f.type for f in fields(TrainConfig)}
    kwargs = {}
    for line in lines:
        key, _, raw = line.partition("=")
        if key not in kinds:
            raise CheckpointError(f"unknown config key {key!r}")
        kind = kinds[key]
        if kind == "bool":
            kwargs[key] = raw == "true"
        elif kind == "int":
            kwargs[key] = int(raw)
        elif kind == "float":
            kwargs[key] = float(raw)
        else:
            kwargs[key] = raw
    return TrainConfig(**kwargs)


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    names = sorted(ckpt.params)
    header = [CHECKPOINT_MAGIC.decode(), f"format_version={ckpt.version}"]
    header.append("[config]")
    header.extend(_config_lines(ckpt.config))
    header.append("[data]")
    header.append(f"n_features={ckpt.n_features}")
    header.append(f"feature_names={json.dumps(list(ckpt.feature_names))}")
    header.append(f"norm_stats={json.dumps([list(s) for s in ckpt.norm_stats])}")
    header.append("[metrics]")
    for key in sorted(ckpt.val_metrics):
        header.append(f"{key}={ckpt.val_metrics[key]!r}")
    header.append("[tensors]")
    offset = 0
    payload = []
    for name in names:
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f8")
        shape = "x".join(str(d) for d in arr.shape)
        header.append(f"{name} {shape} {offset} {arr.size}")
        payload.append(arr.tobytes())
        offset += arr.size * 8
    header.append("[payload]")
    blob = ("\n".join(header) + "\n").encode("utf-8") + b"".join(payload)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    marker = b"\n[payload]\n"
    cut = blob.find(marker)
    if not blob.startswith(CHECKPOINT_MAGIC + b"\n") or cut < 0:
        raise CheckpointError(f"{path}: not a checkpoint file")
    text = blob[: cut + 1].decode("utf-8").splitlines()
    payload = blob[cut + len(marker) :]

    sections: dict[str, list[str]] = {}
    current = None
    for line in text[1:]:
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is None:
            key, _, raw = line.partition("=")
            if key != "format_version":
                raise CheckpointError(f"{path}: unexpected preamble line {line!r}")
            if int(raw) != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"{path}: format version {raw} unsupported (want {CHECKPOINT_VERSION})"
                )
        else:
            sections[current].append(line)

    try:
        cfg = _parse_config(sections["config"])
        data_kv = dict(line.partition("=")[::2] for line in sections["data"])
        n_features = int(data_kv["n_features"])
        feature_names = tuple(json.loads(data_kv["feature_names"]))
        norm_stats = tuple(tuple(s) for s in json.loads(data_kv["norm_stats"]))
        metrics = {
            line.partition("=")[0]: float(line.partition("=")[2])
            for line in sections["metrics"]
        }
        params: dict[str, np.ndarray] = {}
        for line in sections["tensors"]:
            name, shape_s, offset_s, count_s = line.split(" ")
            shape = tuple(int(d) for d in shape_s.split("x"))
            offset, count = int(offset_s), int(count_s)
            end = offset + count * 8
            if end > len(payload):
                raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
            params[name] = (
                np.frombuffer(payload[offset:end], dtype="<f8").reshape(shape).copy()
            )
    except CheckpointError:
        raise
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc

    return ModelCheckpoint(
        version=CHECKPOINT_VERSION,
        variant=cfg.variant,
        n_features=n_features,
        feature_names=feature_names,
        params=params,
        config=cfg,
        norm_stats=norm_stats,
        val_metrics=metrics,
    )
