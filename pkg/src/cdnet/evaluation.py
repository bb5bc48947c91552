"""Ranking metrics, uncertainty analyses, and their delimited report forms.

AUROC uses the rank-statistic (Mann-Whitney) estimator with ties counted as
half-wins; AUPRC is average precision with tied scores grouped into one
threshold step. Both are cross-checked in the test suite against exhaustive
brute-force oracles. Uncertainty reports are plain arrays plus 20-bin
histograms on [0, 1]; rendering lives elsewhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import numerics as nm, predictor
from .data import Dataset, Journey
from .seeds import substream

N_BINS = 20


class MetricError(ValueError):
    """Metric undefined for this label mix (single class / no positives)."""


class CapabilityError(RuntimeError):
    """The model variant lacks the structure this analysis needs."""


# ---------------------------------------------------------------------------
# ranking metrics


def _check_binary(labels: np.ndarray) -> None:
    if not np.isin(labels, (0, 1)).all():
        raise MetricError("labels must be 0/1")


def auroc(scores, labels) -> float:
    """Probability a random positive outranks a random negative; ties count half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    _check_binary(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("auroc needs at least one positive and one negative")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # midrank, 1-based
        i = j + 1
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision with tied scores collapsed into one threshold step."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    _check_binary(labels)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise MetricError("auprc needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    ap, tp, seen, prev_recall = 0.0, 0, 0, 0.0
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        tp += int(y[i : j + 1].sum())
        seen += j - i + 1
        recall = tp / n_pos
        ap += (tp / seen) * (recall - prev_recall)
        prev_recall = recall
        i = j + 1
    return float(ap)


# ---------------------------------------------------------------------------
# model scoring


def predict_scores(model, ds: Dataset) -> np.ndarray:
    """Class-1 probability per journey on the deterministic path (xi = eta = 0)."""
    batched = getattr(model, "batch_scores", None)
    if batched is not None:
        return batched(ds)
    return np.array(
        [model.forward_journey(j, want_imp_loss=False).yhat.data[1, 0] for j in ds.journeys]
    )


@dataclass(frozen=True)
class MetricsReport:
    task: str
    seeds: tuple[int, ...]
    auroc: tuple[float, ...]
    auprc: tuple[float, ...]

    def mean_std(self, metric: str) -> tuple[float, float]:
        vals = np.asarray(getattr(self, metric))
        return float(vals.mean()), float(vals.std())


def format_mean_std(mean: float, std: float) -> str:
    return f"{mean:.4f}({std:.3f})"


def metrics_to_csv(report: MetricsReport, per_seed_path, summary_path) -> None:
    with open(per_seed_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "seed", "auroc", "auprc"])
        for seed, roc, prc in zip(report.seeds, report.auroc, report.auprc):
            writer.writerow([report.task, seed, repr(roc), repr(prc)])
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "metric", "mean", "std", "formatted"])
        for metric in ("auroc", "auprc"):
            mean, std = report.mean_std(metric)
            writer.writerow([report.task, metric, repr(mean), repr(std), format_mean_std(mean, std)])


def metrics_to_text(report: MetricsReport) -> str:
    roc = format_mean_std(*report.mean_std("auroc"))
    prc = format_mean_std(*report.mean_std("auprc"))
    w = max(len(report.task), len("Task"))
    lines = [
        f"{'Task':<{w}} | AUROC         | AUPRC",
        f"{report.task:<{w}} | {roc:<13} | {prc}",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# uncertainty analyses


def histogram(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Counts over N_BINS uniform bins on [0, 1]."""
    counts, edges = np.histogram(np.asarray(values, dtype=np.float64), bins=N_BINS, range=(0.0, 1.0))
    return counts, edges


def overlap_coefficient(counts_a: np.ndarray, counts_b: np.ndarray) -> float:
    """Sum over bins of min(normalized counts); 1 for identical shapes, 0 for disjoint."""
    a = np.asarray(counts_a, dtype=np.float64)
    b = np.asarray(counts_b, dtype=np.float64)
    if a.sum() <= 0 or b.sum() <= 0:
        raise MetricError("overlap needs non-empty histograms")
    return float(np.minimum(a / a.sum(), b / b.sum()).sum())


def _pred_mixture_np(model, journey: Journey):
    fw = model.forward_journey(journey, want_imp_loss=False)
    if fw.pred_mixture is None:
        raise CapabilityError(f"variant {model.variant!r} has no predictor mixture head")
    beta, mu, sigma2 = fw.pred_mixture
    K_p = beta.shape[0]
    return (
        beta.data.reshape(K_p),
        mu.data.reshape(K_p, predictor.N_CLASSES),
        sigma2.data.reshape(K_p, predictor.N_CLASSES),
    )


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class EpistemicReport:
    """Per-component class probabilities from the mean path (eta = 0)."""

    beta: np.ndarray  # (K_p,)
    probs: np.ndarray  # (K_p, 2), rows sum to 1
    weighted_mean: float  # beta-weighted mean of class-1 probabilities
    weighted_std: float  # beta-weighted spread of class-1 probabilities
    hist_counts: np.ndarray  # (N_BINS,) over class-1 probabilities
    bin_edges: np.ndarray  # (N_BINS + 1,)


def epistemic_analysis(model, journey: Journey) -> EpistemicReport:
    """Spread across mixture components, each evaluated at its mean logits."""
    beta, mu, _ = _pred_mixture_np(model, journey)
    probs = _softmax_rows(mu)
    class1 = probs[:, 1]
    wmean = float(np.sum(beta * class1))
    wstd = float(np.sqrt(np.sum(beta * (class1 - wmean) ** 2)))
    counts, edges = histogram(class1)
    return EpistemicReport(
        beta=beta,
        probs=probs,
        weighted_mean=wmean,
        weighted_std=wstd,
        hist_counts=counts,
        bin_edges=edges,
    )


@dataclass(frozen=True)
class AleatoricReport:
    """Class-probability draws under predictor noise, with per-class histograms."""

    draws: np.ndarray  # (n, 2)
    hist_class0: np.ndarray
    hist_class1: np.ndarray
    bin_edges: np.ndarray
    overlap: float  # between the two class histograms


def aleatoric_analysis(
    model, journey: Journey, n: int = 100, rng: np.random.Generator | None = None
) -> AleatoricReport:
    """n independent noise draws through the class sampler."""
    beta_np, mu_np, sigma2_np = _pred_mixture_np(model, journey)
    K_p = beta_np.shape[0]
    beta = nm.constant(beta_np.reshape(K_p, 1))
    mu = nm.constant(mu_np.reshape(K_p * predictor.N_CLASSES, 1))
    sigma2 = nm.constant(sigma2_np.reshape(K_p * predictor.N_CLASSES, 1))
    draws = np.empty((n, predictor.N_CLASSES))
    for i in range(n):
        eta = rng.standard_normal((K_p, predictor.N_CLASSES)) if rng is not None else None
        draws[i] = predictor.class_sample(beta, mu, sigma2, eta).data[:, 0]
    h0, edges = histogram(draws[:, 0])
    h1, _ = histogram(draws[:, 1])
    return AleatoricReport(
        draws=draws,
        hist_class0=h0,
        hist_class1=h1,
        bin_edges=edges,
        overlap=overlap_coefficient(h0, h1),
    )


@dataclass(frozen=True)
class EnsembleReport:
    """Class-1 probabilities from independently seeded feed-forward heads."""

    probs: np.ndarray  # (n,)
    hist_counts: np.ndarray
    bin_edges: np.ndarray


def trunk_representations(model, ds: Dataset) -> np.ndarray:
    """Pooled (N,) representation per journey, deterministic path; shape (P, N)."""
    batched = getattr(model, "batch_overall", None)
    if batched is not None:
        return batched(ds)
    reps = []
    for j in ds.journeys:
        fw = model.forward_journey(j, want_imp_loss=False)
        if fw.x_overall is None:
            raise CapabilityError(f"variant {model.variant!r} has no pooled representation")
        reps.append(fw.x_overall.data[:, 0])
    return np.array(reps)


def _train_ffn_head(
    reps: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    rng: np.random.Generator,
    hidden_dim: int,
    epochs: int,
    lr: float,
    momentum: float,
) -> tuple[nm.Tensor, ...]:
    n_feat = reps.shape[1]
    w1 = nm.parameter(rng.normal(0.0, 0.4, size=(hidden_dim, n_feat)))
    b1 = nm.parameter(np.zeros((hidden_dim, 1)))
    w2 = nm.parameter(rng.normal(0.0, 0.4, size=(2, hidden_dim)))
    b2 = nm.parameter(np.zeros((2, 1)))
    params = (w1, b1, w2, b2)

    X = nm.constant(reps.T)  # (N, P)
    P = reps.shape[0]
    onehot = np.zeros((2, P))
    onehot[labels, np.arange(P)] = 1.0
    onehot_c = nm.constant(onehot)
    w_row = nm.constant(weights.reshape(1, P))
    total_w = float(weights.sum())

    velocity = [np.zeros_like(p.data) for p in params]
    for _ in range(epochs):
        with nm.GradientTape() as tape:
            tape.watch(*params)
            hidden = nm.relu(nm.add(nm.matmul(w1, X), nm.tile_cols(b1, P)))
            yhat = nm.softmax(nm.add(nm.matmul(w2, hidden), nm.tile_cols(b2, P)), axis=0)
            picked = nm.sum_axis(nm.mul(yhat, onehot_c), axis=0)  # (1, P)
            nll = nm.neg(nm.log(nm.clip(picked, predictor.PROB_FLOOR, 1.0 - predictor.PROB_FLOOR)))
            loss = nm.mul(nm.sum_all(nm.mul(nll, w_row)), 1.0 / total_w)
        grads = tape.backward(loss)
        for v, p in zip(velocity, params):
            v *= momentum
            v += grads[p]
            p.data -= lr * v
    return params


def ffn_ensemble(
    model,
    train_ds: Dataset,
    journey: Journey,
    n: int = 100,
    base_seed: int = 0,
    hidden_dim: int = 16,
    epochs: int = 60,
    lr: float = 0.5,
    momentum: float = 0.9,
) -> EnsembleReport:
    """Ensemble comparator: n small heads trained on the frozen trunk's pooled output.

    Head i draws its init from an indexed sub-stream of ``base_seed``, so a
    rerun with the same seed list reproduces the histogram bit for bit.
    """
    reps = trunk_representations(model, train_ds)
    labels = train_ds.labels()
    w0, w1_ = predictor.class_weights_for(labels)
    weights = np.where(labels == 1, w1_, w0).astype(np.float64)
    target = trunk_representations(model, Dataset((journey,), train_ds.feature_names))[0]

    probs = np.empty(n)
    for i in range(n):
        rng = substream(base_seed, "ffn", i)
        w1, b1, w2, b2 = _train_ffn_head(
            reps, labels, weights, rng, hidden_dim, epochs, lr, momentum
        )
        hidden = np.maximum(w1.data @ target.reshape(-1, 1) + b1.data, 0.0)
        logits = w2.data @ hidden + b2.data
        e = np.exp(logits - logits.max())
        probs[i] = (e / e.sum())[1, 0]
    counts, edges = histogram(probs)
    return EnsembleReport(probs=probs, hist_counts=counts, bin_edges=edges)


# ---------------------------------------------------------------------------
# attention reports


@dataclass(frozen=True)
class RanScore:
    feature: str
    feature_index: int
    t: int
    gamma: float


def ran_report(model, journey: Journey, feature_names=None) -> list[RanScore]:
    """Attention weights of imputed cells only, ordered by feature then time."""
    fw = model.forward_journey(journey, want_imp_loss=False)
    if fw.gamma is None:
        raise CapabilityError(f"variant {model.variant!r} has no attention regularizer")
    gamma = fw.gamma.data
    names = list(feature_names) if feature_names else [f"f{i+1}" for i in range(journey.n_features)]
    rows = []
    for i in range(journey.n_features):
        for t in range(journey.T):
            if journey.M[i, t] == 0.0:
                rows.append(RanScore(names[i], i, t, float(gamma[i, t])))
    return rows


# ---------------------------------------------------------------------------
# delimited writers


def hist_to_csv(path, edges: np.ndarray, series: dict[str, np.ndarray]) -> None:
    """bin_left, bin_right, then one count column per series."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", *series.keys()])
        for b in range(len(edges) - 1):
            writer.writerow(
                [repr(float(edges[b])), repr(float(edges[b + 1]))]
                + [int(counts[b]) for counts in series.values()]
            )


def epistemic_to_csv(report: EpistemicReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["component", "beta", "p_class0", "p_class1"])
        for k in range(len(report.beta)):
            writer.writerow(
                [k, repr(float(report.beta[k])), repr(float(report.probs[k, 0])), repr(float(report.probs[k, 1]))]
            )


def aleatoric_to_csv(report: AleatoricReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["draw", "p_class0", "p_class1"])
        for i, (p0, p1) in enumerate(report.draws):
            writer.writerow([i, repr(float(p0)), repr(float(p1))])


def ensemble_to_csv(report: EnsembleReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["head", "p_class1"])
        for i, p in enumerate(report.probs):
            writer.writerow([i, repr(float(p))])


def ran_to_csv(rows: list[RanScore], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "t", "gamma"])
        for r in rows:
            writer.writerow([r.feature, r.t, repr(r.gamma)])
