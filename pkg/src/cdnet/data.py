"""Journey data model: CSV ingestion, normalization, splitting, synthesis.

A journey is one patient's N x T feature matrix with an observation mask and a
binary outcome label. Missing cells are stored as NaN and are never handed to
arithmetic; the model's prefill step swaps them out first, so accidental
leakage crashes loudly instead of silently polluting results.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .seeds import named_rng


class IngestionError(ValueError):
    """Structural problem in input files (id mismatches, duplicates)."""


class ParseError(ValueError):
    """A cell failed to parse; message carries row and column."""


class NormalizationError(ValueError):
    """A feature has no observed training entries to normalize with."""


class SplitError(ValueError):
    """Split preconditions violated (bad ratios or too few journeys)."""


@dataclass(frozen=True)
class Journey:
    """One patient's record block.

    X holds raw values with NaN in missing cells; M is 1 where observed.
    """

    patient_id: str
    X: np.ndarray  # (N, T), float64, NaN where missing
    M: np.ndarray  # (N, T), float64 in {0, 1}
    y: int

    def __post_init__(self):
        if self.X.shape != self.M.shape:
            raise IngestionError(
                f"journey {self.patient_id}: X {self.X.shape} vs M {self.M.shape}"
            )
        if self.X.ndim != 2 or self.X.shape[1] < 1:
            raise IngestionError(f"journey {self.patient_id}: needs at least one record")
        if self.y not in (0, 1):
            raise IngestionError(f"journey {self.patient_id}: label {self.y!r} not in {{0,1}}")

    @property
    def n_features(self) -> int:
        return self.X.shape[0]

    @property
    def T(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class Dataset:
    journeys: tuple[Journey, ...]
    feature_names: tuple[str, ...]
    feature_types: tuple[str, ...] = ()
    # per-feature (mean, std) of the training split's observed cells; set by normalize()
    norm_stats: tuple[tuple[float, float], ...] | None = None
    generator_manifest: dict | None = None

    def __post_init__(self):
        if not self.feature_types:
            object.__setattr__(
                self, "feature_types", tuple("continuous" for _ in self.feature_names)
            )
        n = len(self.feature_names)
        for j in self.journeys:
            if j.n_features != n:
                raise IngestionError(
                    f"journey {j.patient_id} has {j.n_features} features, dataset has {n}"
                )

    def __len__(self) -> int:
        return len(self.journeys)

    def labels(self) -> np.ndarray:
        return np.array([j.y for j in self.journeys], dtype=np.int64)

    def by_id(self, patient_id: str) -> Journey:
        for j in self.journeys:
            if j.patient_id == patient_id:
                return j
        raise IngestionError(f"unknown journey id {patient_id!r}")


@dataclass(frozen=True)
class SynthConfig:
    n_journeys: int = 2000
    n_features: int = 8
    n_steps: int = 24
    missing_rate: float = 0.5
    mnar_strength: float = 1.0
    label_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.missing_rate <= 1.0:
            raise ValueError(f"missing_rate {self.missing_rate} outside [0, 1]")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ValueError(f"label_noise {self.label_noise} outside [0, 1]")
        if self.mnar_strength < 0.0:
            raise ValueError(f"mnar_strength {self.mnar_strength} must be >= 0")
        if self.n_journeys < 1 or self.n_features < 1 or self.n_steps < 1:
            raise ValueError("n_journeys, n_features, n_steps must all be positive")


# ---------------------------------------------------------------------------
# CSV ingestion


def _parse_cell(text: str, row: int, col: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"non-numeric cell {text!r} at row {row}, column {col!r}") from None


def load_csv(values_path, labels_path) -> Dataset:
    """Build a Dataset from a long-format values CSV and a labels CSV.

    Values columns: patient_id, t, then one column per feature; empty cell
    means missing. Labels columns: patient_id, label. Every patient in either
    file must appear in the other.
    """
    with open(values_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 3 or header[:2] != ["patient_id", "t"]:
            raise IngestionError(
                f"{values_path}: header must start with patient_id,t followed by features"
            )
        feature_names = tuple(header[2:])
        rows: dict[str, dict[float, list[float]]] = {}
        order: list[str] = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise IngestionError(f"{values_path}: row {lineno} has {len(rec)} fields")
            pid = rec[0]
            t = _parse_cell(rec[1], lineno, "t")
            if pid not in rows:
                rows[pid] = {}
                order.append(pid)
            if t in rows[pid]:
                raise IngestionError(f"duplicate (patient_id, t) = ({pid!r}, {rec[1]})")
            vals = [
                math.nan if cell == "" else _parse_cell(cell, lineno, feature_names[i])
                for i, cell in enumerate(rec[2:])
            ]
            rows[pid][t] = vals

    with open(labels_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["patient_id", "label"]:
            raise IngestionError(f"{labels_path}: header must be patient_id,label")
        labels: dict[str, int] = {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            pid = rec[0]
            if pid in labels:
                raise IngestionError(f"duplicate label for patient {pid!r}")
            raw = _parse_cell(rec[1], lineno, "label")
            if raw not in (0.0, 1.0):
                raise IngestionError(f"label {rec[1]!r} for patient {pid!r} not in {{0,1}}")
            labels[pid] = int(raw)

    missing_labels = [pid for pid in order if pid not in labels]
    if missing_labels:
        raise IngestionError(f"patients without labels: {missing_labels}")
    unknown = [pid for pid in labels if pid not in rows]
    if unknown:
        raise IngestionError(f"labels for unknown patients: {unknown}")

    journeys = []
    for pid in order:
        ts = sorted(rows[pid])
        X = np.array([rows[pid][t] for t in ts], dtype=np.float64).T
        M = (~np.isnan(X)).astype(np.float64)
        journeys.append(Journey(patient_id=pid, X=X, M=M, y=labels[pid]))
    return Dataset(journeys=tuple(journeys), feature_names=feature_names)


def _fmt(x: float) -> str:
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def save_csv(ds: Dataset, values_path, labels_path) -> None:
    """Write a Dataset in the schema load_csv reads (empty cell = missing)."""
    with open(values_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "t", *ds.feature_names])
        for j in ds.journeys:
            for t in range(j.T):
                writer.writerow([j.patient_id, t, *(_fmt(v) for v in j.X[:, t])])
    with open(labels_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "label"])
        for j in ds.journeys:
            writer.writerow([j.patient_id, j.y])


# ---------------------------------------------------------------------------
# normalization


def compute_norm_stats(ds: Dataset) -> tuple[tuple[float, float], ...]:
    """Per-feature (mean, population std) over observed cells; std floored at 1e-8."""
    stats = []
    for i, name in enumerate(ds.feature_names):
        observed = np.concatenate([j.X[i, :][j.M[i, :] == 1.0] for j in ds.journeys])
        if observed.size == 0:
            raise NormalizationError(f"feature {name!r} has no observed training entries")
        mean = float(np.mean(observed))
        std = max(float(np.std(observed)), 1e-8)
        stats.append((mean, std))
    return tuple(stats)


def normalize(ds: Dataset, stats: tuple[tuple[float, float], ...] | None = None) -> Dataset:
    """Z-score observed cells; masks unchanged, missing cells stay NaN.

    With ``stats`` omitted the dataset is treated as the training split and
    stats are computed from its own observed cells.
    """
    if stats is None:
        stats = compute_norm_stats(ds)
    means = np.array([m for m, _ in stats])[:, None]
    stds = np.array([s for _, s in stats])[:, None]
    journeys = tuple(
        replace(j, X=np.where(j.M == 1.0, (j.X - means) / stds, np.nan))
        for j in ds.journeys
    )
    return replace(ds, journeys=journeys, norm_stats=tuple(stats))


def denormalize(ds: Dataset) -> Dataset:
    """Invert normalize() using the stats stored on the dataset."""
    if ds.norm_stats is None:
        raise NormalizationError("dataset carries no normalization stats")
    means = np.array([m for m, _ in ds.norm_stats])[:, None]
    stds = np.array([s for _, s in ds.norm_stats])[:, None]
    journeys = tuple(
        replace(j, X=np.where(j.M == 1.0, j.X * stds + means, np.nan)) for j in ds.journeys
    )
    return replace(ds, journeys=journeys, norm_stats=None)


# ---------------------------------------------------------------------------
# splitting


def split(
    ds: Dataset,
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint, exhaustive train/val/test partition, deterministic under seed.

    Val and test sizes are floor(ratio * n); the remainder goes to train.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios {ratios} do not sum to 1")
    n = len(ds.journeys)
    if n < 3:
        raise SplitError(f"cannot split {n} journeys three ways")
    n_val = int(math.floor(ratios[1] * n))
    n_test = int(math.floor(ratios[2] * n))
    n_train = n - n_val - n_test
    perm = named_rng(seed, "split").permutation(n)

    def take(idx) -> Dataset:
        return replace(ds, journeys=tuple(ds.journeys[i] for i in idx))

    return (
        take(perm[:n_train]),
        take(perm[n_train : n_train + n_val]),
        take(perm[n_train + n_val :]),
    )


# ---------------------------------------------------------------------------
# synthetic MNAR generator


def _miss_prob(rate: float, shift: np.ndarray) -> np.ndarray:
    """Missingness probability: base rate shifted on the logit scale."""
    if rate <= 0.0 or rate >= 1.0:
        return np.full_like(shift, float(rate))
    logit = math.log(rate / (1.0 - rate)) + shift
    return 1.0 / (1.0 + np.exp(-logit))


def synth_generate(cfg: SynthConfig) -> Dataset:
    """Generate journeys from a hidden 2-state (healthy/sick) Markov process.

    The latent state drives feature means, per-feature missingness probability
    (shifted by mnar_strength while sick), and the label (final state, flipped
    with probability label_noise). All generator parameters plus the final
    latent states land in the dataset's generator manifest so oracle tests can
    score against the true process.
    """
    rng = named_rng(cfg.seed, "synth")
    N, T = cfg.n_features, cfg.n_steps

    p_sick_init = 0.3
    persistence = 0.95
    scale = rng.uniform(0.5, 5.0, size=N)
    baseline = rng.normal(0.0, 2.0, size=N) * scale
    state_shift = rng.choice([-1.0, 1.0], size=N) * rng.uniform(0.05, 0.2, size=N) * scale
    # half the features are steady (imputable with low error), half erratic:
    # reliability-aware downweighting of imputed cells has something to find
    noise_mult = np.where(rng.permutation(N) % 2 == 0, 0.35, 1.8)
    miss_dir = np.where(np.arange(N) % 2 == 0, 1.0, -1.0)

    journeys = []
    final_states: dict[str, int] = {}
    width = max(4, len(str(cfg.n_journeys - 1)))
    for p in range(cfg.n_journeys):
        pid = f"p{p:0{width}d}"
        states = np.empty(T, dtype=np.int64)
        states[0] = rng.random() < p_sick_init
        for t in range(1, T):
            stay = rng.random() < persistence
            states[t] = states[t - 1] if stay else 1 - states[t - 1]

        means = baseline[:, None] + state_shift[:, None] * states[None, :]
        X_full = means + rng.normal(0.0, 1.0, size=(N, T)) * (noise_mult * scale)[:, None]

        shift = cfg.mnar_strength * miss_dir[:, None] * states[None, :]
        p_miss = _miss_prob(cfg.missing_rate, shift)
        M = (rng.random(size=(N, T)) >= p_miss).astype(np.float64)
        X = np.where(M == 1.0, X_full, np.nan)

        y = int(states[-1])
        if rng.random() < cfg.label_noise:
            y = 1 - y
        final_states[pid] = int(states[-1])
        journeys.append(Journey(patient_id=pid, X=X, M=M, y=y))

    manifest = {
        "config": {
            "n_journeys": cfg.n_journeys,
            "n_features": N,
            "n_steps": T,
            "missing_rate": cfg.missing_rate,
            "mnar_strength": cfg.mnar_strength,
            "label_noise": cfg.label_noise,
            "seed": cfg.seed,
        },
        "p_sick_init": p_sick_init,
        "persistence": persistence,
        "scale": scale.tolist(),
        "baseline": baseline.tolist(),
        "state_shift": state_shift.tolist(),
        "noise_mult": noise_mult.tolist(),
        "miss_dir": miss_dir.tolist(),
        "final_states": final_states,
    }
    names = tuple(f"f{i+1}" for i in range(N))
    return Dataset(journeys=tuple(journeys), feature_names=names, generator_manifest=manifest)


# ---------------------------------------------------------------------------
# missingness statistics


@dataclass(frozen=True)
class MissingnessRow:
    feature: str
    feature_type: str
    missing_pct: float


def missingness_stats(ds: Dataset) -> list[MissingnessRow]:
    """Per feature, 100 * (1 - mean(M)) over all cells, to 2 decimals."""
    if not ds.journeys:
        raise IngestionError("missingness_stats needs a non-empty dataset")
    rows = []
    for i, name in enumerate(ds.feature_names):
        total = sum(j.T for j in ds.journeys)
        observed = sum(float(np.sum(j.M[i, :])) for j in ds.journeys)
        pct = round(100.0 * (1.0 - observed / total), 2)
        rows.append(MissingnessRow(name, ds.feature_types[i], pct))
    return rows


def stats_to_csv(rows: list[MissingnessRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "type", "missing_pct"])
        for r in rows:
            writer.writerow([r.feature, r.feature_type, f"{r.missing_pct:.2f}"])


def stats_to_text(rows: list[MissingnessRow]) -> str:
    """Aligned 'Heart Rate | continuous | 27.43' style table."""
    w_feat = max(len("Feature"), *(len(r.feature) for r in rows))
    w_type = max(len("Type"), *(len(r.feature_type) for r in rows))
    lines = [f"{'Feature':<{w_feat}} | {'Type':<{w_type}} | Missingness (%)"]
    for r in rows:
        lines.append(f"{r.feature:<{w_feat}} | {r.feature_type:<{w_type}} | {r.missing_pct:.2f}")
    return "\n".join(lines) + "\n"
