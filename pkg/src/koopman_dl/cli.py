"""``koopman-dl`` command line: generate, train, eval, inspect.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import io
from .errors import InvalidInputError, NumericalError, TrainingDivergedError
from .experiment import (
    ExperimentConfig,
    compare_sweep,
    efunc_sample_count,
    evaluate_reconstruction,
    fit_model,
    make_dataset,
)
from .koopman import reconstruct
from .metrics import eigenfunction_errors, eigenfunction_standard_errors
from .rng import make_rng

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

THREADS_ENV = "KOOPMAN_DL_THREADS"
DATASET_FILE = "dataset.kdld"
MODEL_FILE = "model.json"
HISTORY_FILE = "history.csv"

class UsageError(Exception):
    pass


def load_config(args, seed_name):
    if not args.config:
        raise UsageError("--config is required")
    try:
        doc = io.read_json(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    cfg = ExperimentConfig.from_dict(doc)
    return cfg.with_overrides(args.seed, seed_name, getattr(args, "ic_literal", False))


def out_dir(args):
    path = Path(args.out or ".")
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}") from exc
    return path


def read_dataset_arg(args, out):
    path = Path(args.data) if args.data else out / DATASET_FILE
    if not path.exists():
        raise UsageError(f"dataset {path} not found")
    return io.read_dataset(path)


# -- commands -----------------------------------------------------------------

def cmd_generate(args):
    cfg = load_config(args, "data")
    out = out_dir(args)
    dataset = make_dataset(cfg)
    path = out / DATASET_FILE
    io.write_dataset(path, dataset)
    print(f"wrote {dataset.n_samples} pairs of dimension {dataset.state_dim} to {path}")


def _print_eigen_summary(model, final_loss):
    if final_loss is not None:
        print(f"final J: {final_loss!r}")
    moduli = np.abs(model.eigenvalues)[:10]
    print("top eigenvalue moduli: " + " ".join(f"{m:.6f}" for m in moduli))


def cmd_train(args):
    cfg = load_config(args, "init")
    out = out_dir(args)
    dataset = read_dataset_arg(args, out)
    try:
        model, history = fit_model(cfg, dataset)
    except TrainingDivergedError as exc:
        io.write_history_csv(out / HISTORY_FILE, exc.history)
        raise
    io.save_model(out / MODEL_FILE, model)
    if history is not None:
        io.write_history_csv(out / HISTORY_FILE, history)
    _print_eigen_summary(model, model.info.get("final_loss", model.info.get("residual")))


def _load_model_for(cfg, args, out):
    path = Path(args.model) if args.model else out / MODEL_FILE
    if not path.exists():
        raise UsageError(f"model {path} not found")
    model = io.load_model(path)
    if model.state_dim != cfg.state_dim:
        raise UsageError(
            f"model state dimension {model.state_dim} does not match the configured "
            f"system ({cfg.state_dim})")
    return model


def eval_reconstruct(cfg, model, out):
    report = evaluate_reconstruction(cfg, model)
    system = cfg.system_object()
    n_steps = cfg.eval_option("n_steps")
    d = model.state_dim
    header = ["trial", "step"] + [f"true_{i}" for i in range(d)] + \
        [f"pred_{i}" for i in range(d)] + ["error"]
    rows = []
    for k, trial in enumerate(report.trials):
        truth = system.truth(trial, n_steps)
        pred = reconstruct(model, truth[0], n_steps)
        err = np.linalg.norm(truth - pred, axis=1)
        for n in range(n_steps + 1):
            rows.append([k, n, *truth[n], *pred[n], err[n]])
    io.write_csv(out / "reconstruction.csv", header, rows)
    io.write_error_report(out / "reconstruction_errors.csv", out / "reconstruction_summary.json", report)
    print(f"mean reconstruction error over {report.count} trials: {report.mean!r}")


def eval_eigvals(cfg, model, out):
    io.write_eigenvalues_csv(out / "eigenvalues.csv", model)
    _print_eigen_summary(model, None)


def eval_efunc(cfg, model, out):
    rng = make_rng(cfg.seeds["eval"], "efunc")
    samples, images = cfg.system_object().sample_pairs(rng, efunc_sample_count(cfg))
    errors = eigenfunction_errors(model, samples, images)
    stderr = eigenfunction_standard_errors(model, samples, images)
    rows = ([j, mu.real, mu.imag, abs(mu), e, s]
            for j, (mu, e, s) in enumerate(zip(model.eigenvalues, errors, stderr)))
    io.write_csv(out / "efunc_errors.csv", ["index", "re", "im", "modulus", "E", "stderr"], rows)
    k = min(int(cfg.eval_option("efunc_leading")), model.output_dim)
    print(f"mean E over the leading {k} eigenfunctions: {float(np.mean(errors[:k]))!r}")


def eval_compare(cfg, args, out):
    dataset = read_dataset_arg(args, out)
    rows = compare_sweep(cfg, dataset)
    io.write_csv(out / "compare.csv", ["method", "size", "M", "mean_error", "std_error", "trials"], rows)
    for method, size, _, mean, _, _ in rows:
        print(f"{method:8s} size {size:3d}  mean error {mean:.6g}")


def cmd_eval(args):
    cfg = load_config(args, "eval")
    out = out_dir(args)
    if args.mode == "compare":
        eval_compare(cfg, args, out)
        return
    model = _load_model_for(cfg, args, out)
    {"reconstruct": eval_reconstruct, "eigvals": eval_eigvals, "efunc-error": eval_efunc}[args.mode](
        cfg, model, out)


def cmd_inspect(args):
    path = Path(args.path)
    if not path.exists():
        raise UsageError(f"{path} not found")
    head = path.read_bytes()[:4]
    if head == io.DATASET_MAGIC:
        ds = io.read_dataset(path)
        info = {"type": "dataset", "n_samples": ds.n_samples, "state_dim": ds.state_dim,
                "metadata": ds.metadata}
    elif head == io.TRAJECTORY_MAGIC:
        traj = io.read_trajectory_binary(path)
        info = {"type": "trajectory", "rows": traj.shape[0], "cols": traj.shape[1]}
    else:
        model = io.load_model(path)
        info = {
            "type": "model",
            "dictionary": model.dictionary.kind,
            "state_dim": model.state_dim,
            "output_dim": model.output_dim,
            "lambda": model.lam,
            "eigenvector_condition": model.spectrum.condition,
            "max_modulus": float(np.max(np.abs(model.eigenvalues))),
            "info": model.info,
        }
    print(json.dumps(info, indent=1, sort_keys=True))


# -- entry point ------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--seed", type=int, help="override the seed this command consumes")
    common.add_argument("--ic-literal", action="store_true",
                        help="KS only: use the 2*pi*z initial-condition formula")
    common.add_argument("--threads", type=int, help=f"BLAS thread cap (fallback: ${THREADS_ENV})")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="koopman-dl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a snapshot dataset")
    p = sub.add_parser("train", parents=[common], help="fit a model to a dataset")
    p.add_argument("--data", help=f"dataset path (default: OUT/{DATASET_FILE})")
    p = sub.add_parser("eval", parents=[common], help="evaluate a model or run a size sweep")
    p.add_argument("--mode", required=True, choices=["reconstruct", "eigvals", "efunc-error", "compare"])
    p.add_argument("--model", help=f"model path (default: OUT/{MODEL_FILE})")
    p.add_argument("--data", help="dataset path for compare (default: OUT/dataset.kdld)")
    p = sub.add_parser("inspect", help="print dataset or model metadata")
    p.add_argument("path")
    p.add_argument("--threads", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "inspect": cmd_inspect}


def thread_limit(args):
    if args.threads is not None:
        n = args.threads
    elif os.environ.get(THREADS_ENV):
        try:
            n = int(os.environ[THREADS_ENV])
        except ValueError:
            raise UsageError(f"${THREADS_ENV} must be an integer") from None
    else:
        return None
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=thread_limit(args)):
            COMMANDS[args.command](args)
    except (UsageError, InvalidInputError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
