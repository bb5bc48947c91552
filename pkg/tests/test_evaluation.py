import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdnet import data, evaluation, training
from cdnet.seeds import named_rng


# ---------------------------------------------------------------------------
# brute-force oracles


def auroc_oracle(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def auprc_oracle(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    thresholds = np.unique(scores)[::-1]
    ap, prev_recall = 0.0, 0.0
    for theta in thresholds:
        predicted = scores >= theta
        tp = int((predicted & (labels == 1)).sum())
        precision = tp / int(predicted.sum())
        recall = tp / n_pos
        ap += precision * (recall - prev_recall)
        prev_recall = recall
    return ap


def test_auroc_hand_example():
    assert evaluation.auroc([0.9, 0.8, 0.4, 0.2], [1, 0, 1, 0]) == 0.75


def test_auroc_perfect_separation():
    assert evaluation.auroc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0


def test_auroc_all_ties():
    assert evaluation.auroc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5


def test_auroc_single_class_rejected():
    with pytest.raises(evaluation.MetricError):
        evaluation.auroc([0.1, 0.2], [1, 1])


def test_auprc_hand_examples():
    assert evaluation.auprc([0.2, 0.9], [1, 0]) == pytest.approx(0.5, abs=1e-15)
    assert evaluation.auprc([0.9, 0.8, 0.1], [1, 1, 0]) == pytest.approx(1.0, abs=1e-15)


def test_auprc_no_positives_rejected():
    with pytest.raises(evaluation.MetricError):
        evaluation.auprc([0.1, 0.2], [0, 0])


def test_metrics_match_oracles_on_1000_random_instances():
    rng = np.random.default_rng(123)
    for _ in range(1000):
        n = int(rng.integers(2, 21))
        labels = rng.integers(0, 2, size=n)
        if labels.sum() == 0:
            labels[rng.integers(n)] = 1
        if labels.sum() == n:
            labels[rng.integers(n)] = 0
        # ties are common on purpose: few distinct score values
        scores = rng.choice([0.1, 0.3, 0.5, 0.7, 0.9], size=n)
        assert evaluation.auroc(scores, labels) == auroc_oracle(scores, labels)
        assert abs(evaluation.auprc(scores, labels) - auprc_oracle(scores, labels)) < 1e-12


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=50)
def test_auroc_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 30))
    labels = np.concatenate([[0, 1], rng.integers(0, 2, size=n - 2)])
    scores = rng.normal(size=n)
    base = evaluation.auroc(scores, labels)
    assert evaluation.auroc(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)
    assert evaluation.auroc(3.0 * scores + 7.0, labels) == pytest.approx(base, abs=1e-12)


# ---------------------------------------------------------------------------
# histograms and overlap


def test_histogram_counts_total():
    counts, edges = evaluation.histogram(np.array([0.0, 0.5, 0.999, 1.0]))
    assert counts.sum() == 4
    assert len(edges) == evaluation.N_BINS + 1


def test_overlap_identical_is_one():
    c = np.array([1, 2, 3, 0])
    assert evaluation.overlap_coefficient(c, 2 * c) == pytest.approx(1.0)


def test_overlap_disjoint_is_zero():
    a = np.array([3, 0, 0, 0])
    b = np.array([0, 0, 5, 0])
    assert evaluation.overlap_coefficient(a, b) == 0.0


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=40)
def test_overlap_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 10, size=20) + np.eye(20)[0]
    b = rng.integers(0, 10, size=20) + np.eye(20)[1]
    assert 0.0 <= evaluation.overlap_coefficient(a, b) <= 1.0


# ---------------------------------------------------------------------------
# model-level analyses (tiny trained models)


@pytest.fixture(scope="module")
def tiny_setup():
    ds = data.synth_generate(
        data.SynthConfig(n_journeys=60, n_features=3, n_steps=6, missing_rate=0.4, seed=5)
    )
    tr, va, te = data.split(ds, seed=5)
    tr = data.normalize(tr)
    va = data.normalize(va, tr.norm_stats)
    cfg = training.TrainConfig(
        seed=1, epochs=3, batch_size=16, learning_rate=0.05,
        d_emb=4, g=6, d_h=6, K=2, d_z=6, K_p=4, variant="cdnet", patience=5,
    )
    res = training.train(cfg, tr, va)
    return res.model, tr, va


def test_epistemic_all_identical_components_zero_spread(tiny_setup):
    model, tr, _ = tiny_setup
    # force identical component means
    base = model.predictor.w_mean[0].data.copy()
    b0 = model.predictor.b_mean[0].data.copy()
    for wm, bm in zip(model.predictor.w_mean, model.predictor.b_mean):
        wm.data = base.copy()
        bm.data = b0.copy()
    rep = evaluation.epistemic_analysis(model, tr.journeys[0])
    assert rep.weighted_std == pytest.approx(0.0, abs=1e-12)


def test_epistemic_hand_two_components(tiny_setup):
    model, tr, _ = tiny_setup
    import math

    rep_model = training.build_variant(
        training.TrainConfig(variant="cdnet", d_emb=4, g=6, d_h=6, K=2, d_z=6, K_p=2),
        3,
        named_rng(0, "init"),
    )
    # mu_1 = [0, 0], mu_2 = [ln 3, 0]
    for k, target in enumerate(([0.0, 0.0], [math.log(3.0), 0.0])):
        rep_model.predictor.w_mean[k].data = np.zeros_like(rep_model.predictor.w_mean[k].data)
        rep_model.predictor.b_mean[k].data = np.array(target).reshape(2, 1)
    rep = evaluation.epistemic_analysis(rep_model, tr.journeys[0])
    np.testing.assert_allclose(sorted(rep.probs[:, 0]), [0.5, 0.75], atol=1e-12)


def test_epistemic_histogram_counts_sum_to_components(tiny_setup):
    model, tr, _ = tiny_setup
    rep = evaluation.epistemic_analysis(model, tr.journeys[0])
    assert rep.hist_counts.sum() == model.cfg.K_p
    np.testing.assert_allclose(rep.probs.sum(axis=1), 1.0, atol=1e-9)


def test_epistemic_requires_mixture_head(tiny_setup):
    _, tr, va = tiny_setup
    cfg = training.TrainConfig(
        seed=0, epochs=1, batch_size=16, learning_rate=0.05,
        d_emb=4, g=6, d_h=6, K=2, d_z=6, K_p=4, variant="cdnet_alpha",
    )
    res = training.train(cfg, tr, va)
    with pytest.raises(evaluation.CapabilityError):
        evaluation.epistemic_analysis(res.model, tr.journeys[0])


def test_aleatoric_tiny_variance_zero_spread(tiny_setup):
    model, tr, _ = tiny_setup
    for wv, bv in zip(model.predictor.w_var, model.predictor.b_var):
        wv.data = np.zeros_like(wv.data)
        bv.data = np.full_like(bv.data, -60.0)  # sigma^2 -> eps
    rep = evaluation.aleatoric_analysis(model, tr.journeys[0], n=50, rng=named_rng(3, "eta"))
    assert np.ptp(rep.draws[:, 1]) < 1e-6
    assert rep.hist_class0.sum() == 50 and rep.hist_class1.sum() == 50


def test_aleatoric_draw_count(tiny_setup):
    model, tr, _ = tiny_setup
    rep = evaluation.aleatoric_analysis(model, tr.journeys[0], n=7, rng=named_rng(4, "eta"))
    assert rep.draws.shape == (7, 2)
    np.testing.assert_allclose(rep.draws.sum(axis=1), 1.0, atol=1e-9)
    assert 0.0 <= rep.overlap <= 1.0


def test_ffn_ensemble_deterministic_and_bounded(tiny_setup):
    model, tr, _ = tiny_setup
    a = evaluation.ffn_ensemble(model, tr, tr.journeys[0], n=5, base_seed=7, epochs=10)
    b = evaluation.ffn_ensemble(model, tr, tr.journeys[0], n=5, base_seed=7, epochs=10)
    np.testing.assert_array_equal(a.probs, b.probs)
    assert a.hist_counts.sum() == 5
    assert ((a.probs >= 0) & (a.probs <= 1)).all()


def test_ffn_ensemble_single_head_single_bar(tiny_setup):
    model, tr, _ = tiny_setup
    rep = evaluation.ffn_ensemble(model, tr, tr.journeys[0], n=1, base_seed=0, epochs=5)
    assert rep.hist_counts.sum() == 1
    assert (rep.hist_counts > 0).sum() == 1


def test_ensemble_vs_epistemic_overlap_in_unit_interval(tiny_setup):
    model, tr, _ = tiny_setup
    ens = evaluation.ffn_ensemble(model, tr, tr.journeys[0], n=8, base_seed=1, epochs=10)
    epi = evaluation.epistemic_analysis(model, tr.journeys[0])
    ov = evaluation.overlap_coefficient(ens.hist_counts, epi.hist_counts)
    assert 0.0 <= ov <= 1.0


# ---------------------------------------------------------------------------
# ran report


def test_ran_report_fully_observed_empty(tiny_setup):
    model, tr, _ = tiny_setup
    j = tr.journeys[0]
    full = data.Journey("full", np.nan_to_num(j.X), np.ones_like(j.M), j.y)
    assert evaluation.ran_report(model, full) == []


def test_ran_report_scores_in_unit_interval(tiny_setup):
    model, tr, _ = tiny_setup
    j = next(jj for jj in tr.journeys if (jj.M == 0).any())
    rows = evaluation.ran_report(model, j, feature_names=tr.feature_names)
    assert len(rows) == int((j.M == 0).sum())
    assert all(0.0 <= r.gamma <= 1.0 for r in rows)
    assert all(j.M[r.feature_index, r.t] == 0.0 for r in rows)


def test_ran_report_needs_ran_variant(tiny_setup):
    _, tr, va = tiny_setup
    cfg = training.TrainConfig(
        seed=0, epochs=1, batch_size=16, learning_rate=0.05,
        d_emb=4, g=6, d_h=6, K=2, d_z=6, K_p=4, variant="cdnet_beta",
    )
    res = training.train(cfg, tr, va)
    with pytest.raises(evaluation.CapabilityError):
        evaluation.ran_report(res.model, tr.journeys[0])


def test_ran_report_anti_monotone_at_identity(tiny_setup):
    model, tr, _ = tiny_setup
    model.ran.w_gamma.data = np.eye(3)
    model.ran.b_gamma.data = np.zeros((3, 1))
    j = next(jj for jj in tr.journeys if (jj.M == 0).sum() >= 2)
    fw = model.forward_journey(j, want_imp_loss=False)
    phi, gamma = fw.phi.data, fw.gamma.data
    for t in range(j.T):
        missing = np.where(j.M[:, t] == 0)[0]
        for i in missing:
            for k in missing:
                if phi[i, t] > phi[k, t]:
                    assert gamma[i, t] < gamma[k, t]


# ---------------------------------------------------------------------------
# report formatting


def test_metrics_report_format():
    rep = evaluation.MetricsReport(
        task="mortality", seeds=(0, 1), auroc=(0.77, 0.79), auprc=(0.34, 0.36)
    )
    mean, std = rep.mean_std("auroc")
    assert mean == pytest.approx(0.78)
    assert evaluation.format_mean_std(mean, std) == "0.7800(0.010)"


def test_metrics_report_single_seed_zero_std():
    rep = evaluation.MetricsReport(task="t", seeds=(0,), auroc=(0.7712,), auprc=(0.33,))
    assert evaluation.format_mean_std(*rep.mean_std("auroc")) == "0.7712(0.000)"


def test_metrics_csv_roundtrip(tmp_path):
    rep = evaluation.MetricsReport(task="t", seeds=(0, 1), auroc=(0.7, 0.8), auprc=(0.3, 0.4))
    evaluation.metrics_to_csv(rep, tmp_path / "per.csv", tmp_path / "sum.csv")
    per = (tmp_path / "per.csv").read_text().splitlines()
    assert per[0] == "task,seed,auroc,auprc"
    assert len(per) == 3
    summary = (tmp_path / "sum.csv").read_text()
    assert "0.7500(0.050)" in summary
