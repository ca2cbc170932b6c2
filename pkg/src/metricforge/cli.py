"""Command line benchmark driver.

Subcommands:

* train: learn a metric from a labeled dataset and save it with a
  per-iteration trace CSV.
* cv: stratified k-fold 1-NN benchmark, emitting a per-fold CSV and a
  deterministic summary JSON (wall times live in a sibling timing file so
  the summary is byte-identical across reruns with the same seed).
* verify: threshold sweep over labeled pairs against a saved model.
* inspect: print a saved model's provenance and spectrum.

Exit codes: 0 success, 2 usage error, 3 I/O or parse error, 4 numerical
failure, 5 training did not converge.
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import dataio
from .errors import (
    DataFormatError,
    MetricForgeError,
    ModelFormatError,
    ModelIntegrityError,
    NumericalError,
)
from .evaluate import kfold_cv, roc_report_rows, verify_pairs
from .model import load as load_model
from .ncml import NcmlConfig, train_ncml
from .pairs import build_constraints
from .pcml import PcmlConfig, train_pcml

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_NO_CONVERGENCE = 5


@dataclass
class RunConfig:
    """Merged command settings: config file values overridden by flags."""

    algorithm: str = "pcml"
    C: float = 0.5
    eps: float = 0.01
    k: int = 1
    pca_dim: int = None
    folds: int = 10
    repeats: int = 1
    seed: int = 0
    jobs: int = 1
    data_format: str = "csv"
    max_iter: int = 100
    qp_tol: float = 1e-6
    out_dir: str = "."

    def learner_config(self):
        if self.algorithm == "pcml":
            return PcmlConfig(C=self.C, eps=self.eps, max_iter=self.max_iter,
                              qp_tol=self.qp_tol)
        return NcmlConfig(C=self.C, eps=self.eps, max_iter=self.max_iter,
                          qp_tol=self.qp_tol, seed=self.seed)


_FIELD_TYPES = {
    "algorithm": str, "C": float, "eps": float, "k": int, "pca_dim": int,
    "folds": int, "repeats": int, "seed": int, "jobs": int,
    "data_format": str, "max_iter": int, "qp_tol": float, "out_dir": str,
}
_CONFIG_ALIASES = {"algo": "algorithm", "pca": "pca_dim", "format": "data_format"}


def _merge_config(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        raw = dataio.read_config_file(args.config)
        for key, text in raw.items():
            field = _CONFIG_ALIASES.get(key, key)
            if field not in _FIELD_TYPES:
                raise ValueError(f"unknown config key {key!r}")
            try:
                values[field] = _FIELD_TYPES[field](text)
            except ValueError:
                raise ValueError(f"bad value for config key {key!r}: {text!r}")
    flag_map = {
        "algo": "algorithm", "C": "C", "eps": "eps", "k": "k",
        "pca": "pca_dim", "folds": "folds", "repeats": "repeats",
        "seed": "seed", "jobs": "jobs", "format": "data_format",
        "max_iter": "max_iter", "qp_tol": "qp_tol", "out_dir": "out_dir",
    }
    for flag, field in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[field] = value
    config = RunConfig(**values)
    if config.algorithm not in ("pcml", "ncml"):
        raise ValueError(f"algo must be pcml or ncml, got {config.algorithm!r}")
    if config.data_format not in ("csv", "libsvm"):
        raise ValueError(f"format must be csv or libsvm, got {config.data_format!r}")
    if config.k < 1:
        raise ValueError("k must be >= 1")
    if config.repeats < 1:
        raise ValueError("repeats must be >= 1")
    if config.jobs < 1:
        raise ValueError("jobs must be >= 1")
    return config


def _json_text(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _settings_dict(run: RunConfig) -> dict:
    return {
        "algorithm": run.algorithm, "C": run.C, "eps": run.eps, "k": run.k,
        "pca_dim": run.pca_dim, "folds": run.folds, "repeats": run.repeats,
        "seed": run.seed, "max_iter": run.max_iter, "qp_tol": run.qp_tol,
    }


def _apply_pca(data, run: RunConfig):
    if run.pca_dim is None:
        return data, None
    from .evaluate import pca_fit_transform
    transform, projected = pca_fit_transform(data, run.pca_dim)
    return projected, transform


def cmd_train(args) -> int:
    run = _merge_config(args)
    data = dataio.read_dataset(args.data, run.data_format)
    projected, transform = _apply_pca(data, run)
    pairs = build_constraints(projected, run.k)
    rows = []
    progress = rows.append
    if run.algorithm == "pcml":
        model, trace = train_pcml(pairs, run.learner_config(), progress=progress)
    else:
        model, trace = train_ncml(pairs, run.learner_config(), progress=progress)
    if transform is not None:
        # Lift the learned metric back to the raw feature space so the saved
        # model applies to unprojected vectors: W M W^T since the projection
        # is linear and centering cancels in differences.
        from .model import MetricModel
        lifted = transform.projection @ model.matrix @ transform.projection.T
        model = MetricModel(lifted, model.meta)

    os.makedirs(run.out_dir, exist_ok=True)
    model_path = os.path.join(run.out_dir, "model.txt")
    model.save(model_path)
    trace_lines = ["iter,primal,dual,gap,seconds"]
    for row in rows:
        trace_lines.append(
            f"{row.iteration},{row.primal!r},{row.dual!r},{row.gap!r},"
            f"{row.seconds!r}"
        )
    dataio.atomic_write_text(os.path.join(run.out_dir, "trace.csv"),
                             "\n".join(trace_lines) + "\n")
    print(f"trained {run.algorithm} on {data.n_samples} samples, "
          f"{pairs.n_pairs} constraints")
    print(f"converged: {model.meta.converged} "
          f"after {model.meta.iterations} iterations "
          f"(final gap {model.meta.final_gap:.6g})")
    print(f"model written to {model_path}")
    return EXIT_OK if model.meta.converged else EXIT_NO_CONVERGENCE


def cmd_cv(args) -> int:
    run = _merge_config(args)
    data = dataio.read_dataset(args.data, run.data_format)
    reports = []
    for repeat in range(run.repeats):
        report = kfold_cv(
            data, run.algorithm, run.learner_config(), folds=run.folds,
            seed=run.seed + repeat, k=run.k, pca_dim=run.pca_dim,
            jobs=run.jobs,
        )
        reports.append(report)

    os.makedirs(run.out_dir, exist_ok=True)
    fold_lines = ["repeat,fold,error,converged,train_seconds"]
    for repeat, report in enumerate(reports):
        for fold, (err, conv, secs) in enumerate(zip(
                report.fold_errors, report.converged, report.wall_times)):
            fold_lines.append(f"{repeat},{fold},{err!r},{int(conv)},{secs!r}")
    dataio.atomic_write_text(os.path.join(run.out_dir, "cv_folds.csv"),
                             "\n".join(fold_lines) + "\n")

    all_errors = [e for rep in reports for e in rep.fold_errors]
    summary = dict(sorted(_settings_dict(run).items()))
    summary["fold_errors"] = [rep.fold_errors for rep in reports]
    summary["per_repeat_mean"] = [rep.mean_error for rep in reports]
    summary["mean_error"] = float(np.mean(all_errors))
    summary["std_error"] = float(np.std(all_errors))
    summary["all_converged"] = all(all(rep.converged) for rep in reports)
    dataio.atomic_write_text(os.path.join(run.out_dir, "cv_summary.json"),
                             _json_text(summary))

    total_seconds = float(sum(sum(rep.wall_times) for rep in reports))
    dataio.atomic_write_text(
        os.path.join(run.out_dir, "cv_timing.json"),
        _json_text({"total_train_seconds": total_seconds}),
    )
    print(f"cv mean error {summary['mean_error']:.4f} "
          f"over {run.repeats} x {run.folds} folds "
          f"({total_seconds:.2f}s training)")
    if not summary["all_converged"]:
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_verify(args) -> int:
    run = _merge_config(args)
    model = load_model(args.model)
    data = dataio.read_dataset(args.features, run.data_format)
    idx_a, idx_b, matched = dataio.read_pair_file(args.pairs, data.n_samples)
    report = verify_pairs(
        model, data.features[idx_a], data.features[idx_b], matched,
        n_thresholds=args.thresholds,
    )
    os.makedirs(run.out_dir, exist_ok=True)
    lines = ["threshold,tpr,fpr,accuracy"]
    for t, tp, fp, acc in roc_report_rows(report):
        lines.append(f"{t!r},{tp!r},{fp!r},{acc!r}")
    dataio.atomic_write_text(os.path.join(run.out_dir, "roc.csv"),
                             "\n".join(lines) + "\n")
    payload = {
        "best_accuracy": report.best_accuracy,
        "best_threshold": report.best_threshold,
        "n_pairs": int(matched.size),
        "n_matched": int(matched.sum()),
    }
    dataio.atomic_write_text(os.path.join(run.out_dir, "verify_summary.json"),
                             _json_text(payload))
    print(f"best accuracy {report.best_accuracy:.4f} "
          f"at threshold {report.best_threshold:.6g}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .model import PSD_TOL
    # Parse leniently so a non-PSD matrix is reported rather than refused.
    try:
        model = load_model(args.model)
        matrix = model.matrix
        meta = model.meta
        psd_ok = True
    except ModelIntegrityError:
        matrix, meta, psd_ok = _load_unchecked(args.model)
    values = np.linalg.eigvalsh(matrix)
    scale = max(1.0, float(np.abs(matrix).max()))
    psd_ok = psd_ok and values[0] >= -PSD_TOL * scale
    print(f"algorithm: {meta.algorithm}")
    print(f"dim: {matrix.shape[0]}")
    print(f"C: {meta.C:g}  eps: {meta.eps:g}")
    print(f"iterations: {meta.iterations}  converged: {int(meta.converged)}")
    print(f"final_gap: {meta.final_gap:.6g}")
    print(f"eigenvalues: min {values[0]:.6g}  max {values[-1]:.6g}  "
          f"trace {values.sum():.6g}")
    print(f"PSD: {'YES' if psd_ok else 'NO'}")
    return EXIT_OK if psd_ok else EXIT_NUMERIC


def _load_unchecked(path):
    """Reread a model whose matrix failed integrity checks, for inspection."""
    from .model import ModelMeta, _meta_field, _parse_float, _parse_int

    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    algorithm = _meta_field(lines, 1, "algorithm")
    dim = _parse_int(_meta_field(lines, 2, "dim"), 3)
    c_value = _parse_float(_meta_field(lines, 3, "C"), 4)
    eps = _parse_float(_meta_field(lines, 4, "eps"), 5)
    iterations = _parse_int(_meta_field(lines, 5, "iterations"), 6)
    converged = _meta_field(lines, 6, "converged") == "1"
    final_gap = _parse_float(_meta_field(lines, 7, "final_gap"), 8)
    rows = [[float(tok) for tok in lines[9 + r].split()] for r in range(dim)]
    meta = ModelMeta(algorithm=algorithm, C=c_value, eps=eps,
                     iterations=iterations, converged=converged,
                     final_gap=final_gap)
    matrix = np.array(rows)
    return (matrix + matrix.T) / 2.0, meta, False


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metricforge",
        description="Mahalanobis metric learning benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_data=True):
        if with_data:
            p.add_argument("--data", required=True, help="dataset file")
        p.add_argument("--format", choices=("csv", "libsvm"), default=None,
                       help="dataset format (default csv)")
        p.add_argument("--algo", choices=("pcml", "ncml"), default=None,
                       help="learning algorithm (default pcml)")
        p.add_argument("--C", type=float, default=None,
                       help="slack penalty (default 0.5)")
        p.add_argument("--eps", type=float, default=None,
                       help="gap ratio stopping threshold (default 0.01)")
        p.add_argument("--k", type=int, default=None,
                       help="neighbors per sample for constraints (default 1)")
        p.add_argument("--pca", type=int, default=None,
                       help="project to this many principal components first")
        p.add_argument("--seed", type=int, default=None,
                       help="random seed (default 0)")
        p.add_argument("--max-iter", dest="max_iter", type=int, default=None,
                       help="outer iteration cap (default 100)")
        p.add_argument("--qp-tol", dest="qp_tol", type=float, default=None,
                       help="subproblem KKT tolerance (default 1e-6)")
        p.add_argument("--config", default=None,
                       help="key=value config file; flags override it")
        p.add_argument("--out-dir", dest="out_dir", default=None,
                       help="output directory (default .)")

    p_train = sub.add_parser("train", help="train a metric and save it")
    add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_cv = sub.add_parser("cv", help="stratified k-fold 1-NN benchmark")
    add_common(p_cv)
    p_cv.add_argument("--folds", type=int, default=None,
                      help="number of folds (default 10)")
    p_cv.add_argument("--repeats", type=int, default=None,
                      help="number of seeded repetitions (default 1)")
    p_cv.add_argument("--jobs", type=int, default=None,
                      help="parallel fold workers (default 1)")
    p_cv.set_defaults(func=cmd_cv)

    p_verify = sub.add_parser("verify", help="pair verification sweep")
    p_verify.add_argument("--model", required=True, help="saved model file")
    p_verify.add_argument("--features", required=True,
                          help="feature file the pair indices refer to")
    p_verify.add_argument("--pairs", required=True,
                          help="csv of idx_a,idx_b,matched rows")
    p_verify.add_argument("--format", choices=("csv", "libsvm"), default=None)
    p_verify.add_argument("--thresholds", type=int, default=200,
                          help="thresholds between min and max distance")
    p_verify.add_argument("--config", default=None)
    p_verify.add_argument("--out-dir", dest="out_dir", default=None)
    p_verify.set_defaults(func=cmd_verify)

    p_inspect = sub.add_parser("inspect", help="print a saved model")
    p_inspect.add_argument("--model", required=True, help="saved model file")
    p_inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (DataFormatError, ModelFormatError, ModelIntegrityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MetricForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
