"""Command-line interface: synth, train, eval, impute, uncertainty, ran-report.

Every subcommand takes an optional plain-text config file (key=value lines,
'#' comments); explicit flags win over file values and unknown keys are
fatal. All outputs land under --out-dir together with a manifest.csv listing
each produced file and its sha256, and reruns with identical flags produce
byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import data, evaluation, plots, training
from .seeds import named_rng


class CliError(ValueError):
    """Bad flags or config keys; reported without a traceback."""


STRUCTURED_ERRORS = (
    CliError,
    data.IngestionError,
    data.ParseError,
    data.NormalizationError,
    data.SplitError,
    evaluation.MetricError,
    evaluation.CapabilityError,
    training.TrainingError,
    training.CheckpointError,
    ValueError,
    OSError,
)


# ---------------------------------------------------------------------------
# option plumbing


def _read_config_file(path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise CliError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        values[key.strip()] = val.strip()
    return values


def _coerce(raw: str, kind):
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise CliError(f"expected boolean, got {raw!r}")
    return kind(raw)


class Opt:
    def __init__(self, name, kind, default, help, required=False, repeat=False):
        self.name = name  # snake_case dest
        self.kind = kind
        self.default = default
        self.help = help
        self.required = required
        self.repeat = repeat

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


def _add_options(parser: argparse.ArgumentParser, opts: list[Opt]) -> None:
    parser.add_argument("--config", default=None, help="key=value config file; flags override")
    for o in opts:
        kwargs = dict(dest=o.name, help=o.help, default=argparse.SUPPRESS)
        if o.kind is bool:
            kwargs["action"] = "store_true"
        elif o.repeat:
            kwargs["action"] = "append"
            kwargs["type"] = o.kind
        else:
            kwargs["type"] = o.kind
        parser.add_argument(o.flag, **kwargs)


def _resolve(ns: argparse.Namespace, opts: list[Opt]) -> dict:
    """defaults <- config file <- explicit flags; unknown config keys are fatal."""
    known = {o.name: o for o in opts}
    merged = {o.name: o.default for o in opts}
    if ns.config is not None:
        for key, raw in _read_config_file(ns.config).items():
            if key not in known:
                raise CliError(f"unknown config key {key!r}; known: {sorted(known)}")
            o = known[key]
            if o.repeat:
                merged[key] = [_coerce(part, o.kind) for part in raw.split(",") if part]
            else:
                merged[key] = _coerce(raw, o.kind)
    for key, val in vars(ns).items():
        if key in known and val is not None:
            merged[key] = val
    missing = [known[k].flag for k, v in merged.items() if known[k].required and v is None]
    if missing:
        raise CliError(f"missing required flags: {missing}")
    return merged


# ---------------------------------------------------------------------------
# shared helpers


def _out_dir(merged) -> Path:
    out = Path(merged["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, paths: list[Path]) -> Path:
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "sha256"])
        for p in sorted(paths, key=lambda p: p.name):
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            writer.writerow([p.name, digest])
    return manifest


def _load_dataset(merged) -> data.Dataset:
    base = Path(merged["data_dir"])
    return data.load_csv(base / "values.csv", base / "labels.csv")


def _splits_for_checkpoint(ds: data.Dataset, ckpt: training.ModelCheckpoint):
    tr, va, te = data.split(ds, seed=ckpt.config.seed)
    return (
        data.normalize(tr, ckpt.norm_stats),
        data.normalize(va, ckpt.norm_stats),
        data.normalize(te, ckpt.norm_stats),
    )


def _model_and_journeys(merged):
    """Checkpoint model plus the requested journeys, normalized with its stats."""
    ckpt = training.load_checkpoint(merged["checkpoint"])
    model = training.model_from_checkpoint(ckpt)
    ds = data.normalize(_load_dataset(merged), ckpt.norm_stats)
    journeys = [ds.by_id(pid) for pid in merged["journey"]]
    return ckpt, model, ds, journeys


def _config_echo(merged, opts) -> str:
    lines = [f"{o.name}={merged[o.name]}" for o in sorted(opts, key=lambda o: o.name)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# synth


SYNTH_OPTS = [
    Opt("out_dir", str, None, "output directory", required=True),
    Opt("n", int, 2000, "number of journeys"),
    Opt("features", int, 8, "features per journey"),
    Opt("steps", int, 24, "records per journey"),
    Opt("missing_rate", float, 0.5, "base per-cell missing probability"),
    Opt("mnar_strength", float, 1.0, "logit shift of missingness in the sick state"),
    Opt("label_noise", float, 0.0, "probability of flipping each label"),
    Opt("seed", int, 0, "generator seed"),
]


def cmd_synth(merged) -> int:
    cfg = data.SynthConfig(
        n_journeys=merged["n"],
        n_features=merged["features"],
        n_steps=merged["steps"],
        missing_rate=merged["missing_rate"],
        mnar_strength=merged["mnar_strength"],
        label_noise=merged["label_noise"],
        seed=merged["seed"],
    )
    out = _out_dir(merged)
    ds = data.synth_generate(cfg)
    values, labels = out / "values.csv", out / "labels.csv"
    data.save_csv(ds, values, labels)

    gen = out / "generator_manifest.txt"
    man = ds.generator_manifest
    lines = [f"{k}={v}" for k, v in man["config"].items()]
    for key in ("p_sick_init", "persistence", "scale", "baseline", "state_shift",
                "noise_mult", "miss_dir"):
        lines.append(f"{key}={man[key]}")
    gen.write_text("\n".join(lines) + "\n", encoding="utf-8")

    rows = data.missingness_stats(ds)
    stats_csv, stats_txt = out / "missingness_stats.csv", out / "missingness_stats.txt"
    data.stats_to_csv(rows, stats_csv)
    stats_txt.write_text(data.stats_to_text(rows), encoding="utf-8")

    _write_manifest(out, [values, labels, gen, stats_csv, stats_txt])
    print(f"wrote {len(ds.journeys)} journeys to {out}")
    return 0


# ---------------------------------------------------------------------------
# train


TRAIN_OPTS = [
    Opt("data_dir", str, None, "directory with values.csv and labels.csv", required=True),
    Opt("out_dir", str, None, "output directory", required=True),
    Opt("variant", str, "cdnet", "cdnet | cdnet_alpha | cdnet_beta | mean_baseline"),
    Opt("seed", int, 0, "base seed; run i uses seed + i"),
    Opt("seeds", int, 1, "number of repeated runs"),
    Opt("epochs", int, 100, "max epochs"),
    Opt("batch_size", int, 64, "journeys per batch"),
    Opt("learning_rate", float, 1e-3, "SGD learning rate"),
    Opt("momentum", float, 0.9, "SGD momentum"),
    Opt("lambda_imp", float, 1.0, "imputation-loss weight"),
    Opt("patience", int, 10, "early-stop patience on validation AUROC"),
    Opt("d_emb", int, 32, "embedding width"),
    Opt("g", int, 64, "recurrent state width"),
    Opt("d_h", int, 64, "imputation head hidden width"),
    Opt("K", int, 5, "imputation mixture components"),
    Opt("d_z", int, 64, "predictor hidden width"),
    Opt("K_p", int, 100, "predictor mixture components"),
    Opt("xi_mode", str, "independent", "imputation noise sharing: independent | shared"),
    Opt("ran_activation", str, "relu", "attention regularizer activation: relu | identity"),
    Opt("aux_masked_mse", bool, False, "add masked raw-space MSE to the imputation loss"),
]


def cmd_train(merged) -> int:
    if merged["seeds"] < 1:
        raise CliError("--seeds must be at least 1")
    out = _out_dir(merged)
    ds = _load_dataset(merged)
    produced: list[Path] = []

    resolved = out / "resolved_config.txt"
    resolved.write_text(_config_echo(merged, TRAIN_OPTS), encoding="utf-8")
    produced.append(resolved)

    seeds = [merged["seed"] + i for i in range(merged["seeds"])]
    rocs, prcs = [], []
    for seed in seeds:
        cfg = training.TrainConfig(
            seed=seed,
            epochs=merged["epochs"],
            batch_size=merged["batch_size"],
            learning_rate=merged["learning_rate"],
            momentum=merged["momentum"],
            lambda_imp=merged["lambda_imp"],
            variant=merged["variant"],
            d_emb=merged["d_emb"],
            g=merged["g"],
            d_h=merged["d_h"],
            K=merged["K"],
            d_z=merged["d_z"],
            K_p=merged["K_p"],
            patience=merged["patience"],
            xi_mode=merged["xi_mode"],
            ran_activation=merged["ran_activation"],
            aux_masked_mse=merged["aux_masked_mse"],
        )
        tr, va, _ = data.split(ds, seed=seed)
        tr = data.normalize(tr)
        va = data.normalize(va, tr.norm_stats)
        result = training.train(cfg, tr, va)

        ckpt_path = out / f"checkpoint_seed{seed}.cdn"
        training.save_checkpoint(result.checkpoint, ckpt_path)
        produced.append(ckpt_path)

        log_path = out / f"train_log_seed{seed}.csv"
        with open(log_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_auroc", "val_auprc"])
            for row in result.log:
                writer.writerow(
                    [row.epoch, repr(row.train_loss), repr(row.val_auroc), repr(row.val_auprc)]
                )
        produced.append(log_path)
        rocs.append(result.checkpoint.val_metrics["val_auroc"])
        prcs.append(result.checkpoint.val_metrics["val_auprc"])
        print(f"seed {seed}: best val AUROC {rocs[-1]:.4f}, AUPRC {prcs[-1]:.4f}")

    report = evaluation.MetricsReport(
        task=f"{merged['variant']} validation", seeds=tuple(seeds),
        auroc=tuple(rocs), auprc=tuple(prcs),
    )
    per_seed, summary = out / "val_metrics_per_seed.csv", out / "val_metrics_summary.csv"
    evaluation.metrics_to_csv(report, per_seed, summary)
    text = out / "val_metrics.txt"
    text.write_text(evaluation.metrics_to_text(report), encoding="utf-8")
    produced += [per_seed, summary, text]
    _write_manifest(out, produced)
    return 0


# ---------------------------------------------------------------------------
# eval


EVAL_OPTS = [
    Opt("checkpoint", str, None, "checkpoint file (repeatable)", required=True, repeat=True),
    Opt("data_dir", str, None, "directory with values.csv and labels.csv", required=True),
    Opt("out_dir", str, None, "output directory", required=True),
    Opt("task", str, "mortality", "task label for the report"),
]


def cmd_eval(merged) -> int:
    out = _out_dir(merged)
    ds = _load_dataset(merged)
    seeds, rocs, prcs = [], [], []
    for path in merged["checkpoint"]:
        ckpt = training.load_checkpoint(path)
        model = training.model_from_checkpoint(ckpt)
        _, _, te = _splits_for_checkpoint(ds, ckpt)
        scores = evaluation.predict_scores(model, te)
        seeds.append(ckpt.config.seed)
        rocs.append(evaluation.auroc(scores, te.labels()))
        prcs.append(evaluation.auprc(scores, te.labels()))
        print(f"{Path(path).name}: test AUROC {rocs[-1]:.4f}, AUPRC {prcs[-1]:.4f}")

    report = evaluation.MetricsReport(
        task=merged["task"], seeds=tuple(seeds), auroc=tuple(rocs), auprc=tuple(prcs)
    )
    per_seed, summary = out / "metrics_per_seed.csv", out / "metrics_summary.csv"
    evaluation.metrics_to_csv(report, per_seed, summary)
    text = out / "metrics.txt"
    text.write_text(evaluation.metrics_to_text(report), encoding="utf-8")
    figure = out / "metrics.png"
    plots.render_metrics(figure, report)
    roc = evaluation.format_mean_std(*report.mean_std("auroc"))
    prc = evaluation.format_mean_std(*report.mean_std("auprc"))
    print(f"{merged['task']}: AUROC {roc}  AUPRC {prc}")
    _write_manifest(out, [per_seed, summary, text, figure])
    return 0


# ---------------------------------------------------------------------------
# impute


IMPUTE_OPTS = [
    Opt("checkpoint", str, None, "trained cdnet/cdnet_beta checkpoint", required=True),
    Opt("data_dir", str, None, "directory with values.csv and labels.csv", required=True),
    Opt("journey", str, None, "journey id (repeatable)", required=True, repeat=True),
    Opt("out_dir", str, None, "output directory", required=True),
]


def cmd_impute(merged) -> int:
    ckpt, model, ds, journeys = _model_and_journeys(merged)
    if model.variant not in ("cdnet", "cdnet_beta"):
        raise evaluation.CapabilityError(
            f"variant {model.variant!r} has no imputation mixture; impute needs cdnet or cdnet_beta"
        )
    out = _out_dir(merged)
    produced = []
    means = np.array([m for m, _ in ckpt.norm_stats])
    stds = np.array([s for _, s in ckpt.norm_stats])
    for j in journeys:
        fw = model.forward_journey(j, want_imp_loss=False)
        combined = fw.x_combined.data
        mixed_var = fw.imputation.mixed_var.data
        path = out / f"imputed_{j.patient_id}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature", "t", "value", "observed", "mixed_var"])
            for i, name in enumerate(ds.feature_names):
                for t in range(j.T):
                    raw = combined[i, t] * stds[i] + means[i]
                    writer.writerow(
                        [name, t, repr(float(raw)), int(j.M[i, t]), repr(float(mixed_var[i, t]))]
                    )
        produced.append(path)
        print(f"imputed journey {j.patient_id} -> {path.name}")
    _write_manifest(out, produced)
    return 0


# ---------------------------------------------------------------------------
# uncertainty


UNCERTAINTY_OPTS = [
    Opt("checkpoint", str, None, "trained checkpoint with a predictor mixture", required=True),
    Opt("data_dir", str, None, "directory with values.csv and labels.csv", required=True),
    Opt("journey", str, None, "journey id (repeatable)", required=True, repeat=True),
    Opt("out_dir", str, None, "output directory", required=True),
    Opt("draws", int, 100, "noise draws for the aleatoric analysis"),
    Opt("ensemble_size", int, 100, "feed-forward heads in the comparator"),
    Opt("ensemble_epochs", int, 60, "training epochs per head"),
    Opt("seed", int, 0, "seed for noise draws and head inits"),
]


def cmd_uncertainty(merged) -> int:
    ckpt, model, ds, journeys = _model_and_journeys(merged)
    out = _out_dir(merged)
    tr, _, _ = _splits_for_checkpoint(_load_dataset(merged), ckpt)
    produced = []
    for j in journeys:
        pid = j.patient_id
        epi = evaluation.epistemic_analysis(model, j)
        ale = evaluation.aleatoric_analysis(
            model, j, n=merged["draws"], rng=named_rng(merged["seed"], "eta")
        )
        ens = evaluation.ffn_ensemble(
            model, tr, j,
            n=merged["ensemble_size"], base_seed=merged["seed"],
            epochs=merged["ensemble_epochs"],
        )

        files = {
            f"epistemic_{pid}.csv": lambda p: evaluation.epistemic_to_csv(epi, p),
            f"aleatoric_{pid}.csv": lambda p: evaluation.aleatoric_to_csv(ale, p),
            f"ensemble_{pid}.csv": lambda p: evaluation.ensemble_to_csv(ens, p),
            f"epistemic_hist_{pid}.csv": lambda p: evaluation.hist_to_csv(
                p, epi.bin_edges, {"mdn_components": epi.hist_counts, "ffn_ensemble": ens.hist_counts}
            ),
            f"aleatoric_hist_{pid}.csv": lambda p: evaluation.hist_to_csv(
                p, ale.bin_edges, {"class0": ale.hist_class0, "class1": ale.hist_class1}
            ),
        }
        for name, write in files.items():
            path = out / name
            write(path)
            produced.append(path)

        comparison_png = out / f"uncertainty_{pid}.png"
        plots.render_ensemble_comparison(comparison_png, ens, epi, pid)
        aleatoric_png = out / f"aleatoric_{pid}.png"
        plots.render_aleatoric(aleatoric_png, ale, pid)
        produced += [comparison_png, aleatoric_png]

        summary = out / f"uncertainty_summary_{pid}.txt"
        mdn_ffn = evaluation.overlap_coefficient(epi.hist_counts, ens.hist_counts)
        summary.write_text(
            "\n".join(
                [
                    f"journey={pid}",
                    f"epistemic_weighted_mean={epi.weighted_mean!r}",
                    f"epistemic_weighted_std={epi.weighted_std!r}",
                    f"overlap_mdn_vs_ensemble={mdn_ffn!r}",
                    f"overlap_aleatoric_classes={ale.overlap!r}",
                ]
            )
            + "\n",
            encoding="utf-8",
        )
        produced.append(summary)
        print(f"journey {pid}: epistemic spread {epi.weighted_std:.4f}, "
              f"mdn/ensemble overlap {mdn_ffn:.3f}")
    _write_manifest(out, produced)
    return 0


# ---------------------------------------------------------------------------
# ran-report


RAN_OPTS = [
    Opt("checkpoint", str, None, "trained cdnet checkpoint", required=True),
    Opt("data_dir", str, None, "directory with values.csv and labels.csv", required=True),
    Opt("journey", str, None, "journey id (repeatable)", required=True, repeat=True),
    Opt("out_dir", str, None, "output directory", required=True),
]


def cmd_ran_report(merged) -> int:
    _, model, ds, journeys = _model_and_journeys(merged)
    out = _out_dir(merged)
    produced = []
    for j in journeys:
        rows = evaluation.ran_report(model, j, feature_names=ds.feature_names)
        path = out / f"ran_scores_{j.patient_id}.csv"
        evaluation.ran_to_csv(rows, path)
        png = out / f"ran_scores_{j.patient_id}.png"
        plots.render_ran_heatmap(png, j, rows, ds.feature_names)
        produced += [path, png]
        print(f"journey {j.patient_id}: {len(rows)} imputed cells scored")
    _write_manifest(out, produced)
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdnet",
        description="Joint imputation-and-prediction for clinical time series",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts, help_ in (
        ("synth", SYNTH_OPTS, "generate a synthetic MNAR dataset"),
        ("train", TRAIN_OPTS, "train one or more seeds of a variant"),
        ("eval", EVAL_OPTS, "test-split metrics for checkpoints"),
        ("impute", IMPUTE_OPTS, "imputed values and variances per journey"),
        ("uncertainty", UNCERTAINTY_OPTS, "epistemic/aleatoric/ensemble reports"),
        ("ran-report", RAN_OPTS, "attention scores over imputed cells"),
    ):
        _add_options(sub.add_parser(name, help=help_), opts)
    return parser


COMMANDS = {
    "synth": (cmd_synth, SYNTH_OPTS),
    "train": (cmd_train, TRAIN_OPTS),
    "eval": (cmd_eval, EVAL_OPTS),
    "impute": (cmd_impute, IMPUTE_OPTS),
    "uncertainty": (cmd_uncertainty, UNCERTAINTY_OPTS),
    "ran-report": (cmd_ran_report, RAN_OPTS),
}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    handler, opts = COMMANDS[ns.command]
    try:
        merged = _resolve(ns, opts)
        return handler(merged)
    except STRUCTURED_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
