"""File formats: dataset/trajectory binaries, model JSON and CSV tables.

Binary dataset (``.kdld``), little-endian::

    b"KDLD" | u32 version | u32 N | u32 d | X rows (N*d f64) | Y rows (N*d f64)

Binary trajectory (``.kdlt``)::

    b"KDLT" | u32 version | u32 rows | u32 cols | 4-byte dtype tag b"<f8 " | rows*cols f64

CSV numbers use Python's shortest round-trip ``repr`` for floats.
"""

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .koopman import KoopmanModel, SnapshotDataset

DATASET_MAGIC = b"KDLD"
TRAJECTORY_MAGIC = b"KDLT"
DATASET_VERSION = 1
TRAJECTORY_VERSION = 1
MODEL_FORMAT = "koopman_dl.model"
MODEL_VERSION = 1
DTYPE_TAG = b"<f8 "

_HEADER = struct.Struct("<4sIII")


def fmt(value):
    """Shortest round-trip text for a CSV cell."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, allow_nan=False)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# --------------------------------------------------------------------------
# Datasets and trajectories
# --------------------------------------------------------------------------

def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_dataset(path, dataset):
    """Write the binary dataset plus a JSON sidecar with shapes and metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, d = dataset.X.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, d))
        fh.write(dataset.X.astype("<f8").tobytes(order="C"))
        fh.write(dataset.Y.astype("<f8").tobytes(order="C"))
    write_json(sidecar_path(path), {
        "format": "KDLD",
        "version": DATASET_VERSION,
        "n_samples": n,
        "state_dim": d,
        "metadata": dataset.metadata,
    })


def read_dataset(path):
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise InvalidInputError(f"{path} is too short to be a dataset file")
    magic, version, n, d = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise InvalidInputError(f"{path} is not a dataset file (magic {magic!r})")
    if version != DATASET_VERSION:
        raise InvalidInputError(f"unsupported dataset version {version}")
    expected = _HEADER.size + 2 * n * d * 8
    if len(raw) != expected:
        raise InvalidInputError(f"{path} has {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(float)
    X = data[: n * d].reshape(n, d)
    Y = data[n * d:].reshape(n, d)
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = read_json(side).get("metadata", {})
    return SnapshotDataset(X, Y, meta)


def write_trajectory_binary(path, traj):
    traj = np.ascontiguousarray(traj, dtype="<f8")
    if traj.ndim != 2:
        raise InvalidInputError("trajectory must be 2-D (time, state)")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TRAJECTORY_MAGIC, TRAJECTORY_VERSION, *traj.shape))
        fh.write(DTYPE_TAG)
        fh.write(traj.tobytes(order="C"))


def read_trajectory_binary(path):
    raw = Path(path).read_bytes()
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != TRAJECTORY_MAGIC or version != TRAJECTORY_VERSION:
        raise InvalidInputError(f"{path} is not a version-{TRAJECTORY_VERSION} trajectory file")
    tag = raw[_HEADER.size:_HEADER.size + 4]
    if tag != DTYPE_TAG:
        raise InvalidInputError(f"unsupported dtype tag {tag!r}")
    offset = _HEADER.size + 4
    return np.frombuffer(raw, dtype="<f8", offset=offset, count=rows * cols).reshape(rows, cols).astype(float)


def write_trajectory_csv(path, times, traj):
    traj = np.asarray(traj, dtype=float)
    header = ["t"] + [f"x{i}" for i in range(traj.shape[1])]
    write_csv(path, header, ([t, *row] for t, row in zip(times, traj)))


# --------------------------------------------------------------------------
# Models and tables
# --------------------------------------------------------------------------

def model_to_json(model):
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION}
    doc.update(model.to_dict())
    return doc


def save_model(path, model):
    write_json(path, model_to_json(model))


def load_model(path):
    doc = read_json(path)
    if doc.get("format") != MODEL_FORMAT:
        raise InvalidInputError(f"{path} is not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise InvalidInputError(f"unsupported model version {doc.get('version')}")
    return KoopmanModel.from_dict(doc)


def eigenvalue_rows(model):
    for j, mu in enumerate(model.eigenvalues):
        yield [j, mu.real, mu.imag, abs(mu)]


def write_eigenvalues_csv(path, model):
    write_csv(path, ["index", "re", "im", "modulus"], eigenvalue_rows(model))


def write_history_csv(path, history):
    write_csv(path, ["iteration", "J_k", "J_theta", "grad_norm", "seconds"],
              ([r.iteration, r.J_k, r.J_theta, r.grad_norm, r.seconds] for r in history))


def write_error_report(csv_path, json_path, report):
    write_csv(csv_path, ["trial", "seed", "error"],
              ([i, t.get("seed", ""), e] for i, (t, e) in enumerate(zip(report.trials, report.errors))))
    write_json(json_path, report.summary())
