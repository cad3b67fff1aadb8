"""Batch experiment driver.

Subcommands reproduce the studies end to end and emit everything as files:
JSON models, CSV tables, and grayscale PGM heatmaps with CSV sidecars. Every
command is a pure function of (configuration, input files, seed); rerunning
with the same inputs produces byte-identical outputs, so there are no
timestamps anywhere. Exit codes: 0 success, 2 configuration error, 3 data
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields as dataclass_fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import baselines, data, lrp, persistence, readout, reservoir
from .errors import ConfigError, DataError, NumericError

SWEEP_ALPHAS = (0.01, 0.05, 0.2, 0.4)
SWEEP_TAGS = ("A", "B", "C", "D")
DEFAULT_SYNTHETIC = (16, 96, 300)

COMMANDS = ("train", "evaluate", "relevance", "leak-sweep", "permutation", "synthetic")
CLASS_FILTERS = ("elnino", "lanina", "both")
BASELINES = ("linreg", "mlp", "none")

MODEL_FILE = "esn_model.json"


@dataclass
class ExperimentConfig:
    """Merged view of config-file values and command-line flags."""

    command: str
    data: Optional[str] = None
    out: str = "out"
    seed: int = 0
    alpha: float = 0.01
    n_res: int = 300
    sparsity: float = 0.3
    spectral_radius: float = 0.8
    ridge: float = 0.0
    class_filter: str = "both"
    baseline: str = "none"
    permute_seed: int = 1
    synthetic: Optional[Tuple[int, int, int]] = None
    epsilon: float = 1e-12

    def __post_init__(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.class_filter not in CLASS_FILTERS:
            raise ConfigError(f"--class must be one of {CLASS_FILTERS}, got {self.class_filter!r}")
        if self.baseline not in BASELINES:
            raise ConfigError(f"--baseline must be one of {BASELINES}, got {self.baseline!r}")
        if self.synthetic is not None:
            try:
                ok = len(self.synthetic) == 3 and all(int(v) == v and v >= 1 for v in self.synthetic)
            except (TypeError, ValueError):
                ok = False
            if not ok:
                raise ConfigError(f"--synthetic needs three positive integers d,t,n, got {self.synthetic!r}")
            self.synthetic = tuple(int(v) for v in self.synthetic)

    def esn_config(self, n_in: int, alpha: Optional[float] = None) -> reservoir.EsnConfig:
        return reservoir.EsnConfig(
            n_in=n_in,
            n_res=self.n_res,
            leak_rate=self.alpha if alpha is None else alpha,
            sparsity=self.sparsity,
            spectral_radius=self.spectral_radius,
            seed=self.seed,
        )

    def lrp_config(self) -> lrp.LrpConfig:
        return lrp.LrpConfig(epsilon=self.epsilon)


def parse_synthetic(text: str) -> Tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected d,t,n, got {text!r}")
    try:
        d, t, n = (int(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected integers d,t,n, got {text!r}") from exc
    return d, t, n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="esnlrp",
        description="Train and explain leaky echo state networks on gridded 2-D patterns.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "train": "train a reservoir (and optional baselines), write model and accuracy report",
        "evaluate": "re-evaluate a previously trained model on a dataset",
        "relevance": "per-sample relevance maps, conservation audit, and the mean map",
        "leak-sweep": "train at leak rates 0.01/0.05/0.2/0.4 and compare maps",
        "permutation": "train on column-permuted data and restore the mean map",
        "synthetic": "full study on the generated task with known signal location",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=descriptions[name])
        sp.add_argument("--config", default=None, help="JSON file of settings; flags override it")
        sp.add_argument("--data", default=None, help="dataset container path")
        sp.add_argument("--out", default=None, help="output directory (default: out)")
        sp.add_argument("--seed", type=int, default=None, help="master seed (default: 0)")
        sp.add_argument("--alpha", type=float, default=None, help="leak rate (default: 0.01)")
        sp.add_argument("--n-res", dest="n_res", type=int, default=None, help="reservoir units (default: 300)")
        sp.add_argument("--sparsity", type=float, default=None, help="fraction of nonzero recurrent weights")
        sp.add_argument(
            "--spectral-radius", dest="spectral_radius", type=float, default=None,
            help="target spectral radius of the recurrent matrix (default: 0.8)",
        )
        sp.add_argument("--ridge", type=float, default=None, help="readout ridge penalty (default: 0)")
        sp.add_argument(
            "--class", dest="class_filter", choices=CLASS_FILTERS, default=None,
            help="restrict relevance maps to one class",
        )
        sp.add_argument("--baseline", choices=BASELINES, default=None, help="also train a baseline")
        sp.add_argument(
            "--permute-seed", dest="permute_seed", type=int, default=None,
            help="seed of the column permutation (default: 1)",
        )
        sp.add_argument(
            "--synthetic", type=parse_synthetic, default=None, metavar="D,T,N",
            help="generate D-row, T-column fields, N samples, instead of loading data",
        )
    return parser


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Start from defaults, apply the config file, then non-default flags."""
    values: Dict[str, object] = {}
    if args.config is not None:
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        known = {f.name for f in dataclass_fields(ExperimentConfig)} - {"command"}
        for key, value in loaded.items():
            name = "class_filter" if key == "class" else key
            if name not in known:
                raise ConfigError(f"config file {path} has unknown key {key!r}")
            values[name] = tuple(value) if name == "synthetic" and value is not None else value
    for field in dataclass_fields(ExperimentConfig):
        if field.name in ("command",) or not hasattr(args, field.name):
            continue
        flag = getattr(args, field.name)
        if flag is not None:
            values[field.name] = flag
    return ExperimentConfig(command=args.command, **values)


def resolve_samples(cfg: ExperimentConfig) -> Tuple[data.SampleSet, Optional[data.SstDataset]]:
    """Either generate the synthetic task or run the full dataset pipeline."""
    if cfg.synthetic is not None:
        d, t, n = cfg.synthetic
        return data.synthesize_task(n, d, t, seed=cfg.seed), None
    path = data.locate_dataset(cfg.data)
    if path is None:
        raise DataError(
            "no dataset found: pass --data <path>, set "
            f"{data.ENV_DATASET}, place {data.DEFAULT_DATASET_PATH}, or use --synthetic d,t,n"
        )
    return data.load_enso_samples(path)


def filtered(samples: Sequence[data.LabeledSample], class_filter: str) -> List[data.LabeledSample]:
    if class_filter == "both":
        return list(samples)
    want = readout.ClassLabel.EL_NINO if class_filter == "elnino" else readout.ClassLabel.LA_NINA
    return [s for s in samples if s.label is want]


def train_esn(cfg: ExperimentConfig, sample_set: data.SampleSet, alpha: Optional[float] = None) -> reservoir.EsnModel:
    train = sample_set.train_samples
    if not train:
        raise DataError("sample set has no training samples")
    model = reservoir.init_reservoir(cfg.esn_config(train[0].field.shape[0], alpha))
    states = np.stack(
        [reservoir.run_reservoir(model, data.preprocess_for_esn(s)).final_state for s in train]
    )
    targets = np.array([s.index for s in train])
    solution = readout.fit_readout(states, targets, ridge=cfg.ridge)
    return model.with_readout(solution.w_out, solution.b_out)


def evaluate_esn(model: reservoir.EsnModel, samples: Sequence[data.LabeledSample]) -> readout.AccuracyReport:
    predictions = [
        readout.binarize(reservoir.model_output(model, reservoir.run_reservoir(model, data.preprocess_for_esn(s)))[0])
        for s in samples
    ]
    return readout.accuracy(predictions, [s.label for s in samples])


def maps_for(
    model: reservoir.EsnModel, samples: Sequence[data.LabeledSample], cfg: ExperimentConfig
) -> List[lrp.RelevanceMap]:
    lcfg = cfg.lrp_config()
    return [
        lrp.relevance_map(model, reservoir.run_reservoir(model, data.preprocess_for_esn(s)), lcfg)
        for s in samples
    ]


def accuracy_rows(model_name: str, split: str, report: readout.AccuracyReport) -> List[str]:
    rows = [f"{model_name},{split},accuracy_overall,{report.overall:.9g}"]
    for cls in (readout.ClassLabel.EL_NINO, readout.ClassLabel.LA_NINA):
        if cls in report.per_class:
            rows.append(f"{model_name},{split},accuracy_{cls.value},{report.per_class[cls]:.9g}")
    rows.append(f"{model_name},{split},n_samples,{report.n_samples}")
    return rows


def write_report(path: Path, rows: List[str], header: str = "model,split,metric,value") -> None:
    path.write_text("\n".join([header] + rows) + "\n", encoding="ascii")


def baseline_rows(cfg: ExperimentConfig, sample_set: data.SampleSet, anomalies: Optional[data.SstDataset], out: Path) -> List[str]:
    if cfg.baseline == "none":
        return []
    if anomalies is not None:
        mask = anomalies.grid.valid_mask
    else:
        mask = np.ones(sample_set.samples[0].field.shape, dtype=bool)

    def vec(samples: Sequence[data.LabeledSample]) -> np.ndarray:
        return np.stack([data.preprocess_for_baseline(s, mask) for s in samples])

    train, val = sample_set.train_samples, sample_set.val_samples
    x_train, y_train = vec(train), np.array([s.index for s in train])
    rows: List[str] = []
    if cfg.baseline == "linreg":
        solution = baselines.fit_linreg(x_train, y_train, ridge=cfg.ridge)
        persistence.save_model(out / "baseline_linreg.json", solution)
        for split, samples, x in (("train", train, x_train), ("val", val, None)):
            scores = baselines.linreg_predict(solution, x if x is not None else vec(samples))
            report = readout.accuracy([readout.binarize(s) for s in scores], [s.label for s in samples])
            rows.extend(accuracy_rows("linreg", split, report))
        rows.append(f"linreg,train,mse,{solution.train_mse:.9g}")
    else:
        model, history = baselines.train_mlp(x_train, y_train, seed=cfg.seed)
        persistence.save_model(out / "baseline_mlp.json", model)
        for split, samples in (("train", train), ("val", val)):
            scores = np.atleast_1d(baselines.mlp_predict(model, vec(samples)))
            report = readout.accuracy([readout.binarize(s) for s in scores], [s.label for s in samples])
            rows.extend(accuracy_rows("mlp", split, report))
        rows.append(f"mlp,train,final_loss,{history[-1]:.9g}")
    return rows


def cmd_train(cfg: ExperimentConfig, out: Path) -> None:
    sample_set, anomalies = resolve_samples(cfg)
    model = train_esn(cfg, sample_set)
    persistence.save_model(out / MODEL_FILE, model)
    data.write_sample_index_csv(out / "samples.csv", sample_set)
    rows = []
    for split, samples in (("train", sample_set.train_samples), ("val", sample_set.val_samples)):
        if samples:
            rows.extend(accuracy_rows("esn", split, evaluate_esn(model, samples)))
    rows.extend(baseline_rows(cfg, sample_set, anomalies, out))
    write_report(out / "train_report.csv", rows)


def load_trained_model(out: Path) -> reservoir.EsnModel:
    model_path = out / MODEL_FILE
    if not model_path.exists():
        raise DataError(f"no trained model at {model_path}; run the train command first")
    model = persistence.load_model(model_path)
    if not isinstance(model, reservoir.EsnModel) or not model.is_trained:
        raise DataError(f"{model_path} does not hold a trained reservoir model")
    return model


def cmd_evaluate(cfg: ExperimentConfig, out: Path) -> None:
    model = load_trained_model(out)
    sample_set, _ = resolve_samples(cfg)
    rows = []
    for split, samples in (("train", sample_set.train_samples), ("val", sample_set.val_samples)):
        if samples:
            rows.extend(accuracy_rows("esn", split, evaluate_esn(model, samples)))
    write_report(out / "eval_report.csv", rows)


def cmd_relevance(cfg: ExperimentConfig, out: Path) -> None:
    model = load_trained_model(out)
    sample_set, _ = resolve_samples(cfg)
    samples = filtered(sample_set.train_samples, cfg.class_filter)
    if not samples:
        raise DataError(f"no training samples left after --class {cfg.class_filter}")
    maps = maps_for(model, samples, cfg)

    rel_dir = out / "relevance"
    rel_dir.mkdir(parents=True, exist_ok=True)
    audit = ["sample,month_id,label,output,scores_sum,dummy_sum,absorbed,conservation_error,within_tolerance"]
    for i, (sample, rmap) in enumerate(zip(samples, maps)):
        lrp.write_matrix_csv(rel_dir / f"sample_{i:04d}.csv", rmap.scores)
        audit.append(
            f"{i},{sample.month_id},{sample.label.value},{rmap.total:.9g},"
            f"{rmap.scores.sum():.9g},{rmap.dummy_scores.sum():.9g},{rmap.absorbed:.9g},"
            f"{rmap.conservation_error():.9g},{int(rmap.conserved())}"
        )
    (out / "relevance_audit.csv").write_text("\n".join(audit) + "\n", encoding="ascii")

    mean = lrp.mean_relevance(maps)
    lrp.write_matrix_csv(out / "mean_map.csv", mean)
    lrp.write_heatmap_pgm(out / "mean_map.pgm", mean)


def cmd_leak_sweep(cfg: ExperimentConfig, out: Path) -> None:
    sample_set, _ = resolve_samples(cfg)
    rows = ["alpha,tag,accuracy_overall,accuracy_elnino,accuracy_lanina,mean_map_center_of_gravity"]
    for alpha, tag in zip(SWEEP_ALPHAS, SWEEP_TAGS):
        model = train_esn(cfg, sample_set, alpha=alpha)
        report = evaluate_esn(model, sample_set.val_samples)
        maps = maps_for(model, filtered(sample_set.train_samples, cfg.class_filter), cfg)
        mean = lrp.mean_relevance(maps)
        lrp.write_matrix_csv(out / f"mean_map_{tag}.csv", mean)
        lrp.write_heatmap_pgm(out / f"mean_map_{tag}.pgm", mean)
        per = [
            f"{report.per_class[cls]:.9g}" if cls in report.per_class else ""
            for cls in (readout.ClassLabel.EL_NINO, readout.ClassLabel.LA_NINA)
        ]
        rows.append(
            f"{alpha:.9g},{tag},{report.overall:.9g},{per[0]},{per[1]},"
            f"{lrp.column_center_of_gravity(mean):.9g}"
        )
    (out / "sweep_report.csv").write_text("\n".join(rows) + "\n", encoding="ascii")


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Correlation over all cells; degenerate (constant) inputs give 0."""
    a, b = np.asarray(a, float).ravel(), np.asarray(b, float).ravel()
    if a.std() == 0.0 or b.std() == 0.0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def cmd_permutation(cfg: ExperimentConfig, out: Path) -> None:
    sample_set, _ = resolve_samples(cfg)
    base_model = train_esn(cfg, sample_set)
    base_report = evaluate_esn(base_model, sample_set.val_samples)
    base_maps = maps_for(base_model, filtered(sample_set.train_samples, cfg.class_filter), cfg)
    base_mean = lrp.mean_relevance(base_maps)

    permuted_set = data.permute_columns(sample_set, cfg.permute_seed)
    perm_model = train_esn(cfg, permuted_set)
    perm_report = evaluate_esn(perm_model, permuted_set.val_samples)
    perm_maps = maps_for(perm_model, filtered(permuted_set.train_samples, cfg.class_filter), cfg)
    perm_mean = lrp.mean_relevance(perm_maps)
    restored = data.inverse_permute(perm_mean, permuted_set)

    for name, matrix in (("base", base_mean), ("permuted", perm_mean), ("restored", restored)):
        lrp.write_matrix_csv(out / f"mean_map_{name}.csv", matrix)
        lrp.write_heatmap_pgm(out / f"mean_map_{name}.pgm", matrix)

    r = pearson(base_mean, restored)
    rows = accuracy_rows("esn_base", "val", base_report)
    rows += accuracy_rows("esn_permuted", "val", perm_report)
    rows.append(f"comparison,val,accuracy_gap,{abs(base_report.overall - perm_report.overall):.9g}")
    rows.append(f"comparison,maps,pearson_restored_vs_base,{r:.9g}")
    write_report(out / "permutation_report.csv", rows)


def cmd_synthetic(cfg: ExperimentConfig, out: Path) -> None:
    """Full study on the generated task.

    Relevance maps are averaged per class: map signs follow the sign of the
    model output, so pooling the positive- and negative-target classes would
    cancel the very signal being located.
    """
    if cfg.synthetic is None:
        cfg.synthetic = DEFAULT_SYNTHETIC
    d, t, _ = cfg.synthetic
    sample_set, _ = resolve_samples(cfg)
    model = train_esn(cfg, sample_set)
    persistence.save_model(out / MODEL_FILE, model)
    rows = []
    for split, samples in (("train", sample_set.train_samples), ("val", sample_set.val_samples)):
        if samples:
            rows.extend(accuracy_rows("esn", split, evaluate_esn(model, samples)))
    box = data.synthetic_blob_box(d, t)
    for class_filter in ("elnino", "lanina"):
        samples = filtered(sample_set.train_samples, class_filter)
        if not samples:
            continue
        mean = lrp.mean_relevance(maps_for(model, samples, cfg))
        lrp.write_matrix_csv(out / f"mean_map_{class_filter}.csv", mean)
        lrp.write_heatmap_pgm(out / f"mean_map_{class_filter}.pgm", mean)
        rows.append(f"esn,train,localization_ratio_{class_filter},{data.box_mass_ratio(mean, box):.9g}")
    rows.append(f"esn,train,signal_box,{box[0]}:{box[1]}:{box[2]}:{box[3]}")
    write_report(out / "synthetic_report.csv", rows)


def run(cfg: ExperimentConfig) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    handlers = {
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "relevance": cmd_relevance,
        "leak-sweep": cmd_leak_sweep,
        "permutation": cmd_permutation,
        "synthetic": cmd_synthetic,
    }
    handlers[cfg.command](cfg, out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run(build_config(args))
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
