import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdnet import data
from cdnet.evaluation import auroc


def write_files(tmp_path, values_rows, labels_rows, header="patient_id,t,hr,bp"):
    values = tmp_path / "values.csv"
    labels = tmp_path / "labels.csv"
    values.write_text("\n".join([header, *values_rows]) + "\n")
    labels.write_text("\n".join(["patient_id,label", *labels_rows]) + "\n")
    return values, labels


# ---------------------------------------------------------------------------
# load_csv


def test_load_all_present(tmp_path):
    v, l = write_files(tmp_path, ["a,0,1.0,2.0", "a,1,3.0,4.0"], ["a,1"])
    ds = data.load_csv(v, l)
    j = ds.journeys[0]
    assert ds.feature_names == ("hr", "bp")
    assert j.T == 2 and j.y == 1
    np.testing.assert_array_equal(j.M, np.ones((2, 2)))
    np.testing.assert_array_equal(j.X, [[1.0, 3.0], [2.0, 4.0]])


def test_load_empty_cell_sets_mask_zero(tmp_path):
    v, l = write_files(tmp_path, ["a,0,1.0,", "a,1,3.0,4.0"], ["a,0"])
    ds = data.load_csv(v, l)
    j = ds.journeys[0]
    assert j.M[1, 0] == 0.0 and np.isnan(j.X[1, 0])
    assert j.M[0, 0] == 1.0


def test_load_missing_label_names_patient(tmp_path):
    v, l = write_files(
        tmp_path,
        ["a,0,1,1", "b,0,1,1", "c,0,1,1"],
        ["a,0", "b,1"],
    )
    with pytest.raises(data.IngestionError, match="c"):
        data.load_csv(v, l)


def test_load_unknown_patient_in_labels(tmp_path):
    v, l = write_files(tmp_path, ["a,0,1,1"], ["a,0", "ghost,1"])
    with pytest.raises(data.IngestionError, match="ghost"):
        data.load_csv(v, l)


def test_load_non_numeric_cell_reports_row_and_column(tmp_path):
    v, l = write_files(tmp_path, ["a,0,oops,2.0"], ["a,0"])
    with pytest.raises(data.ParseError, match="row 2.*'hr'"):
        data.load_csv(v, l)


def test_load_duplicate_timestep(tmp_path):
    v, l = write_files(tmp_path, ["a,0,1,1", "a,0,2,2"], ["a,0"])
    with pytest.raises(data.IngestionError, match="duplicate"):
        data.load_csv(v, l)


def test_rows_ordered_by_t(tmp_path):
    v, l = write_files(tmp_path, ["a,2,3.0,0", "a,0,1.0,0", "a,1,2.0,0"], ["a,0"])
    ds = data.load_csv(v, l)
    np.testing.assert_array_equal(ds.journeys[0].X[0], [1.0, 2.0, 3.0])


def test_save_load_roundtrip(tmp_path):
    ds = data.synth_generate(data.SynthConfig(n_journeys=5, n_features=3, n_steps=4, seed=9))
    data.save_csv(ds, tmp_path / "v.csv", tmp_path / "l.csv")
    back = data.load_csv(tmp_path / "v.csv", tmp_path / "l.csv")
    assert back.feature_names == ds.feature_names
    for j0, j1 in zip(ds.journeys, back.journeys):
        assert j0.patient_id == j1.patient_id and j0.y == j1.y
        np.testing.assert_array_equal(j0.M, j1.M)
        np.testing.assert_array_equal(
            np.where(j0.M == 1.0, j0.X, 0.0), np.where(j1.M == 1.0, j1.X, 0.0)
        )


# ---------------------------------------------------------------------------
# normalize


def make_ds(X, M, y=0):
    j = data.Journey("p", np.where(M == 1.0, X, np.nan), M, y)
    return data.Dataset((j,), tuple(f"f{i}" for i in range(X.shape[0])))


def test_normalize_hand_zscore():
    X = np.array([[2.0, 4.0]])
    ds = make_ds(X, np.ones((1, 2)))
    out = data.normalize(ds)
    # observed {2, 4}: mean 3, population std 1
    assert out.norm_stats == ((3.0, 1.0),)
    np.testing.assert_allclose(out.journeys[0].X, [[-1.0, 1.0]])


def test_normalize_constant_feature_std_floor():
    X = np.full((1, 3), 7.0)
    out = data.normalize(make_ds(X, np.ones((1, 3))))
    np.testing.assert_allclose(out.journeys[0].X, np.zeros((1, 3)))


def test_normalize_masks_unchanged():
    X = np.array([[1.0, np.nan], [np.nan, 2.0]])
    M = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = data.normalize(make_ds(X, M))
    np.testing.assert_array_equal(out.journeys[0].M, M)


def test_normalize_feature_with_no_observations():
    X = np.array([[1.0, 2.0], [np.nan, np.nan]])
    M = np.array([[1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(data.NormalizationError, match="f1"):
        data.normalize(make_ds(X, M))


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25)
def test_normalize_denormalize_roundtrip(seed):
    ds = data.synth_generate(
        data.SynthConfig(n_journeys=4, n_features=3, n_steps=5, missing_rate=0.3, seed=seed)
    )
    normed = data.normalize(ds)
    back = data.denormalize(normed)
    for j0, j1 in zip(ds.journeys, back.journeys):
        obs = j0.M == 1.0
        np.testing.assert_allclose(j1.X[obs], j0.X[obs], atol=1e-9)


# ---------------------------------------------------------------------------
# split


def test_split_100():
    ds = data.synth_generate(data.SynthConfig(n_journeys=100, n_features=2, n_steps=2, seed=0))
    tr, va, te = data.split(ds, seed=5)
    assert (len(tr), len(va), len(te)) == (70, 15, 15)


def test_split_10_remainder_to_train():
    ds = data.synth_generate(data.SynthConfig(n_journeys=10, n_features=2, n_steps=2, seed=0))
    tr, va, te = data.split(ds, seed=5)
    assert (len(tr), len(va), len(te)) == (8, 1, 1)


def test_split_deterministic():
    ds = data.synth_generate(data.SynthConfig(n_journeys=20, n_features=2, n_steps=2, seed=0))
    a = data.split(ds, seed=3)
    b = data.split(ds, seed=3)
    for x, y in zip(a, b):
        assert [j.patient_id for j in x.journeys] == [j.patient_id for j in y.journeys]


@given(st.integers(0, 2**31 - 1), st.integers(3, 40))
@settings(max_examples=30)
def test_split_partition_property(seed, n):
    ds = data.synth_generate(data.SynthConfig(n_journeys=n, n_features=2, n_steps=2, seed=1))
    tr, va, te = data.split(ds, seed=seed)
    ids = [j.patient_id for part in (tr, va, te) for j in part.journeys]
    assert len(ids) == n and len(set(ids)) == n


def test_split_bad_ratios():
    ds = data.synth_generate(data.SynthConfig(n_journeys=10, n_features=2, n_steps=2, seed=0))
    with pytest.raises(data.SplitError):
        data.split(ds, ratios=(0.5, 0.2, 0.2), seed=0)


def test_split_too_few():
    ds = data.synth_generate(data.SynthConfig(n_journeys=2, n_features=2, n_steps=2, seed=0))
    with pytest.raises(data.SplitError):
        data.split(ds, seed=0)


# ---------------------------------------------------------------------------
# synth_generate


def test_synth_missing_rate_monte_carlo():
    # mnar off: empirical missingness within +-1% of the configured rate
    cfg = data.SynthConfig(
        n_journeys=500, n_features=10, n_steps=24, missing_rate=0.5, mnar_strength=0.0, seed=11
    )
    ds = data.synth_generate(cfg)
    M = np.concatenate([j.M.ravel() for j in ds.journeys])
    assert M.size >= 1e5
    assert abs((1.0 - M.mean()) - 0.5) < 0.01


def test_synth_label_noise_half_kills_signal():
    cfg = data.SynthConfig(
        n_journeys=2000, n_features=4, n_steps=8, missing_rate=0.3,
        mnar_strength=0.0, label_noise=0.5, seed=13,
    )
    ds = data.synth_generate(cfg)
    # score with the true final latent state: labels are coin flips, AUROC ~ 0.5
    finals = ds.generator_manifest["final_states"]
    scores = np.array([finals[j.patient_id] for j in ds.journeys], dtype=float)
    assert abs(auroc(scores, ds.labels()) - 0.5) < 0.03


def test_synth_noise_free_labels_are_latent_state():
    cfg = data.SynthConfig(n_journeys=300, n_features=4, n_steps=8, label_noise=0.0, seed=17)
    ds = data.synth_generate(cfg)
    finals = ds.generator_manifest["final_states"]
    scores = np.array([finals[j.patient_id] for j in ds.journeys], dtype=float)
    assert auroc(scores, ds.labels()) == 1.0


def test_synth_bit_reproducible():
    cfg = data.SynthConfig(n_journeys=10, n_features=3, n_steps=6, seed=21)
    a, b = data.synth_generate(cfg), data.synth_generate(cfg)
    for j0, j1 in zip(a.journeys, b.journeys):
        np.testing.assert_array_equal(j0.M, j1.M)
        np.testing.assert_array_equal(
            np.where(j0.M == 1.0, j0.X, 0.0), np.where(j1.M == 1.0, j1.X, 0.0)
        )
        assert j0.y == j1.y


def test_synth_config_validation():
    with pytest.raises(ValueError):
        data.SynthConfig(missing_rate=1.2)
    with pytest.raises(ValueError):
        data.SynthConfig(label_noise=-0.1)
    with pytest.raises(ValueError):
        data.SynthConfig(mnar_strength=-1.0)


# ---------------------------------------------------------------------------
# missingness stats


def test_stats_all_observed():
    ds = make_ds(np.ones((2, 3)), np.ones((2, 3)))
    rows = data.missingness_stats(ds)
    assert [r.missing_pct for r in rows] == [0.0, 0.0]


def test_stats_one_feature_fully_missing():
    X = np.array([[1.0, 2.0], [np.nan, np.nan]])
    M = np.array([[1.0, 1.0], [0.0, 0.0]])
    rows = data.missingness_stats(make_ds(X, M))
    assert rows[1].missing_pct == 100.0


def test_stats_text_format():
    X = np.array([[1.0, np.nan, 1.0, 1.0]])
    M = np.array([[1.0, 0.0, 1.0, 1.0]])
    j = data.Journey("p", X, M, 0)
    ds = data.Dataset((j,), ("Heart Rate",), ("continuous",))
    text = data.stats_to_text(data.missingness_stats(ds))
    assert "Heart Rate | continuous | 25.00" in text


def test_stats_track_generated_rate():
    cfg = data.SynthConfig(
        n_journeys=600, n_features=8, n_steps=24, missing_rate=0.3, mnar_strength=0.0, seed=23
    )
    ds = data.synth_generate(cfg)
    total_cells = sum(j.T for j in ds.journeys) * len(ds.feature_names)
    assert total_cells >= 1e5
    for row in data.missingness_stats(ds):
        assert abs(row.missing_pct - 30.0) < 1.0
