"""Synthetic datasets, evaluation metrics and on-disk formats.

Every artifact is JSON (or JSON lines for datasets).  Floats are written with
Python's shortest round-trip repr, so reading a file back reproduces every
value bit for bit.
"""
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .crystal_plasticity import ALL_MODES, FCC, ProcessMode, as_mode
from .errors import DataFormatError, InvalidArgumentError, TextureForgeError
from .fundamental_mesh import mesh_from_dict, normalize_odf
from .homogenization import ObjectiveWeights, homogenize, objective, stiffness_at_quadrature
from .surrogate_nn import MlpModel
from .texture_evolution import ProcessStepConfig, Trajectory, VelocityCache, apply_process

log = logging.getLogger(__name__)

DATASET_FORMAT = 1


@dataclass
class DatasetRecord:
    input_odf: np.ndarray
    mode: ProcessMode
    output_odf: np.ndarray
    provenance: dict = field(default_factory=dict)  # mesh_hash, config_hash, seed, sample

    def to_dict(self):
        return {
            "sample": self.provenance.get("sample"),
            "mode": self.mode.mask,
            "input_odf": np.asarray(self.input_odf).tolist(),
            "output_odf": np.asarray(self.output_odf).tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            input_odf=np.asarray(data["input_odf"], dtype=float),
            mode=ProcessMode(data["mode"]),
            output_odf=np.asarray(data["output_odf"], dtype=float),
            provenance=dict(data.get("provenance", {})),
        )


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def hash_json(obj):
    return hashlib.sha256(_canonical(obj).encode()).hexdigest()


def hash_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def simulator_config_hash(cfg=None, slips=FCC):
    cfg = ProcessStepConfig() if cfg is None else cfg
    return hash_json({"step": cfg.to_dict(), "slips": slips.to_dict()})


def generate_initial_odfs(n, seed, mesh):
    """``n`` ODFs with independent uniform(0, 1) nodal values, each normalized."""
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"need at least one ODF, got n={n!r}")
    rng = np.random.default_rng(seed)
    raw = rng.random((int(n), mesh.n_independent))
    return [normalize_odf(mesh, row) for row in raw]


def generate_dataset(mesh, odfs, modes=ALL_MODES, cfg=None, slips=FCC, seed=None, workers=1):
    """Simulate every (ODF, mode) pair; records ordered by sample then mode id.

    Failed simulations are logged and skipped.
    """
    cfg = ProcessStepConfig() if cfg is None else cfg
    modes = sorted((as_mode(m) for m in modes), key=lambda m: m.id)
    provenance = {
        "mesh_hash": mesh.content_hash,
        "config_hash": simulator_config_hash(cfg, slips),
        "seed": seed,
    }
    cache = VelocityCache(mesh, slips)
    for mode in modes:
        cache(mode)  # fill before any worker starts

    def run(sample):
        out = []
        a = odfs[sample]
        for mode in modes:
            try:
                b = apply_process(mesh, a, mode, cfg, slips, velocity=cache(mode))
            except TextureForgeError as exc:
                log.warning("simulation failed for sample %d, mode %s: %s", sample, mode, exc)
                continue
            out.append(DatasetRecord(np.asarray(a), mode, b, {**provenance, "sample": sample}))
        return out

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run, range(len(odfs))))
    else:
        chunks = [run(i) for i in range(len(odfs))]
    return [rec for chunk in chunks for rec in chunk]


def _input_key(rec):
    return np.asarray(rec.input_odf, dtype=float).tobytes()


def split(records, ratio=0.8, seed=0):
    """Seeded split that keeps all records of one input ODF on the same side."""
    if not 0 < ratio < 1:
        raise InvalidArgumentError(f"ratio must lie in (0, 1), got {ratio!r}")
    groups = {}
    for rec in records:
        groups.setdefault(_input_key(rec), []).append(rec)
    keys = list(groups)
    order = np.random.default_rng(seed).permutation(len(keys))
    n_train = int(round(ratio * len(keys)))
    train_keys = {keys[i] for i in order[:n_train]}
    train = [rec for rec in records if _input_key(rec) in train_keys]
    test = [rec for rec in records if _input_key(rec) not in train_keys]
    return train, test


def records_by_mode(records):
    out = {}
    for rec in records:
        out.setdefault(rec.mode.mask, []).append(rec)
    return out


def relative_l2(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise InvalidArgumentError("length mismatch")
    return float(np.linalg.norm(y_true - y_pred) / np.linalg.norm(y_true))


def stiffness_error(mesh, c0, y_true, y_pred, w=None, c_quad=None):
    """Absolute objective difference (GPa) between the two ODFs' averaged stiffness."""
    w = ObjectiveWeights() if w is None else w
    c_quad = stiffness_at_quadrature(mesh, c0) if c_quad is None else c_quad
    f_true = objective(homogenize(mesh, c0, y_true, c_quad), w)
    f_pred = objective(homogenize(mesh, c0, y_pred, c_quad), w)
    return abs(f_true - f_pred)


# ---------------------------------------------------------------- file formats


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=None, separators=(",", ":")) + "\n")
    os.replace(tmp, path)


def read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataFormatError(f"cannot read file ({exc.strerror})", path) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"invalid JSON: {exc.msg}", path, exc.lineno) from exc


def write_records(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(_canonical(rec.to_dict()) + "\n")


def read_records(path):
    path = Path(path)
    records = []
    try:
        fh = open(path)
    except OSError as exc:
        raise DataFormatError(f"cannot read file ({exc.strerror})", path) from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(DatasetRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, InvalidArgumentError) as exc:
                raise DataFormatError(f"bad dataset record ({exc})", path, lineno) from exc
    return records


def manifest_path(path):
    """``data.jsonl -> data.manifest.json``; non-JSON outputs keep their suffix
    (``t.csv -> t.csv.manifest.json``) so they never collide with a JSON sibling."""
    path = Path(path)
    if path.suffix in (".json", ".jsonl"):
        return path.with_name(path.stem + ".manifest.json")
    return path.with_name(path.name + ".manifest.json")


def dataset_manifest(path, records, seed, mesh, cfg=None, slips=FCC):
    samples = {rec.provenance.get("sample") for rec in records}
    return {
        "format_version": DATASET_FORMAT,
        "n_odfs": len(samples),
        "n_records": len(records),
        "seed": seed,
        "mesh_hash": mesh.content_hash,
        "config_hash": simulator_config_hash(cfg, slips),
        "simulator_config": (ProcessStepConfig() if cfg is None else cfg).to_dict(),
        "data_sha256": hash_file(path),
    }


def save_mesh(path, mesh):
    write_json(path, {**mesh.to_dict(), "content_hash": mesh.content_hash})


def load_mesh(path):
    data = read_json(path)
    try:
        mesh = mesh_from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"not a mesh file ({exc})", path) from exc
    if "content_hash" in data and data["content_hash"] != mesh.content_hash:
        raise DataFormatError("mesh content hash does not verify", path)
    return mesh


def save_odf(path, a, mesh=None):
    data = {"odf": np.asarray(a).tolist()}
    if mesh is not None:
        data["mesh_hash"] = mesh.content_hash
    write_json(path, data)


def load_odf(path, mesh=None):
    data = read_json(path)
    values = data["odf"] if isinstance(data, dict) else data
    a = np.asarray(values, dtype=float)
    if mesh is not None:
        if a.shape != (mesh.n_independent,):
            raise DataFormatError(f"ODF has {a.size} values, mesh has {mesh.n_independent} nodes", path)
        if isinstance(data, dict) and data.get("mesh_hash") not in (None, mesh.content_hash):
            raise DataFormatError("ODF was written for a different mesh", path)
    return a


def save_model(path, model):
    write_json(path, model.to_dict())


def load_model(path):
    data = read_json(path)
    try:
        return MlpModel.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"not a model file ({exc})", path) from exc


def model_filename(mode):
    return f"model_{as_mode(mode).mask}.json"


def load_models(directory):
    """Every ``model_<mask>.json`` in ``directory``, keyed by mask."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataFormatError("model directory not found", directory)
    return {m.mode.mask: m for m in (load_model(p) for p in sorted(directory.glob("model_*.json")))}


def save_trajectory(path, traj, mesh=None):
    data = traj.to_dict()
    if mesh is not None:
        data["mesh_hash"] = mesh.content_hash
        data["nodes"] = mesh.independent_nodes.tolist()
    write_json(path, data)


def load_trajectory(path):
    data = read_json(path)
    try:
        return Trajectory.from_dict(data), data
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"not a trajectory file ({exc})", path) from exc
