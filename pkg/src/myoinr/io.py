"""On-disk formats: dataset directories, array payloads, checkpoints, logs.

Array payload (``*.bin``)::

    b"MINR"  uint32 ndim  uint32 dims[ndim]  float32 data (row-major)

all little-endian. Images are stored frame-major (T, H, W); landmarks
frame-major then point-major (T, P, 2).

Checkpoint::

    b"MYOINR-CKPT 1\\n"
    <one line of JSON header>\\n
    <body: segments of little-endian floats, in header order>

The header records model sizes, omega, arithmetic mode, the canonical
parameter list (name, shape) and the SHA-256 of the body.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import torch

from .core import CaseRecord, LandmarkGrid, TagFrameSeries
from .diffnet import InrModel, ModelConfig, flat_params, param_count, param_spec, set_flat_params
from .synth import AnalyticDeformation

FORMAT_VERSION = 1
ARRAY_MAGIC = b"MINR"
CKPT_MAGIC = b"MYOINR-CKPT 1\n"
MANIFEST = "manifest.json"
RUN_CONFIG = "run_config.json"


class DataError(Exception):
    """Malformed, missing or inconsistent data on disk."""


def _atomic_write(path: Path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def array_bytes(arr) -> bytes:
    a = np.ascontiguousarray(arr, dtype="<f4")
    head = ARRAY_MAGIC + struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape)
    return head + a.tobytes()


def write_array(path, arr) -> int:
    data = array_bytes(arr)
    _atomic_write(Path(path), data)
    return len(data)


def read_array(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing payload {path}")
    data = path.read_bytes()
    if data[:4] != ARRAY_MAGIC:
        raise DataError(f"{path} is not an array payload")
    (ndim,) = struct.unpack_from("<I", data, 4)
    shape = struct.unpack_from(f"<{ndim}I", data, 8)
    off = 8 + 4 * ndim
    n = int(np.prod(shape)) if shape else 1
    if len(data) - off != 4 * n:
        raise DataError(f"{path}: payload length does not match header {shape}")
    return np.frombuffer(data, dtype="<f4", offset=off).reshape(shape).copy()


def write_json(path, obj):
    _atomic_write(Path(path), (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


# -- datasets ---------------------------------------------------------------

def write_dataset(out_dir, cases, generator: dict | None = None, provenance: str = "") -> Path:
    """Write cases plus manifest. Output bytes depend only on the inputs."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create {out}: {e}") from e
    entries = []
    for case in cases:
        s = case.series
        cid = case.case_id
        img_name, lm_name = f"{cid}.images.bin", f"{cid}.landmarks.bin"
        entry = {
            "case_id": cid,
            "frame_count": s.frame_count,
            "image_size": s.image_size,
            "pixel_spacing_mm": s.pixel_spacing_mm,
            "frame_interval_s": s.frame_interval_s,
            "slice_index": s.slice_index,
            "images": {"file": img_name, "bytes": write_array(out / img_name, s.frames)},
        }
        if case.landmarks is not None:
            lm = case.landmarks
            entry["landmarks"] = {"file": lm_name, "bytes": write_array(out / lm_name, lm.points),
                                  "rings": lm.rings, "spokes": lm.spokes}
        if case.ground_truth_deformation is not None:
            entry["deformation"] = case.ground_truth_deformation.to_dict()
        if case.meta:
            entry["meta"] = case.meta
        entries.append(entry)
    manifest = {"format_version": FORMAT_VERSION, "cases": entries}
    if generator is not None:
        manifest["generator"] = generator
    if provenance:
        manifest["provenance"] = provenance
    write_json(out / MANIFEST, manifest)
    return out


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / MANIFEST
    if not path.exists():
        raise DataError(f"no manifest in {data_dir}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"bad manifest {path}: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported dataset format_version {manifest.get('format_version')!r}")
    return manifest


def _payload(root: Path, ref: dict) -> np.ndarray:
    path = root / ref["file"]
    if not path.exists():
        raise DataError(f"missing payload {path}")
    if path.stat().st_size != ref["bytes"]:
        raise DataError(f"{path}: size {path.stat().st_size} != manifest {ref['bytes']}")
    return read_array(path)


def read_dataset(data_dir, case_ids=None) -> list[CaseRecord]:
    root = Path(data_dir)
    manifest = read_manifest(root)
    wanted = None if case_ids is None else set(case_ids)
    cases = []
    for e in manifest["cases"]:
        if wanted is not None and e["case_id"] not in wanted:
            continue
        frames = _payload(root, e["images"])
        if frames.shape != (e["frame_count"], e["image_size"], e["image_size"]):
            raise DataError(f"{e['case_id']}: image shape {frames.shape} disagrees with manifest")
        series = TagFrameSeries(frames, e["pixel_spacing_mm"], e["frame_interval_s"],
                                e["case_id"], e["slice_index"])
        lm = None
        if "landmarks" in e:
            ref = e["landmarks"]
            lm = LandmarkGrid(ref["rings"], ref["spokes"], _payload(root, ref))
        d = AnalyticDeformation.from_dict(e["deformation"]) if "deformation" in e else None
        cases.append(CaseRecord(series, lm, d, e.get("meta", {})))
    if wanted is not None:
        missing = wanted - {c.case_id for c in cases}
        if missing:
            raise DataError(f"cases not in dataset: {sorted(missing)}")
    return cases


# -- checkpoints ------------------------------------------------------------

_DTYPE_CODES = {torch.float32: ("float32", "<f4"), torch.float64: ("float64", "<f8")}
_FROM_NAME = {"float32": torch.float32, "float64": torch.float64}


def checkpoint_bytes(model: InrModel, train_state=None, train_config=None) -> bytes:
    mode, code = _DTYPE_CODES[model.dtype]
    segments = [("params", flat_params(model))]
    header = {
        "format_version": FORMAT_VERSION,
        "model": model.config.to_dict(),
        "dtype": mode,
        "byteorder": "little",
        "parameters": [[n, list(s)] for n, s in param_spec(model)],
    }
    if train_state is not None:
        opt = train_state.optimizer
        segments += [("adam_m", opt.m), ("adam_v", opt.v)]
        header["train"] = {
            "epoch": train_state.epoch,
            "adam_step": opt.step_count,
            "history": train_state.history,
        }
    if train_config is not None:
        header["train_config"] = train_config.to_dict()
    body = b"".join(np.ascontiguousarray(t.numpy(), dtype=code).tobytes() for _, t in segments)
    header["segments"] = [{"name": n, "count": int(t.numel())} for n, t in segments]
    header["body_bytes"] = len(body)
    header["sha256"] = hashlib.sha256(body).hexdigest()
    return CKPT_MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + body


def save_checkpoint(path, model: InrModel, train_state=None, train_config=None):
    _atomic_write(Path(path), checkpoint_bytes(model, train_state, train_config))


def _read_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing checkpoint {path}")
    raw = path.read_bytes()
    if not raw.startswith(CKPT_MAGIC):
        raise DataError(f"{path} is not a checkpoint")
    nl = raw.index(b"\n", len(CKPT_MAGIC))
    header = json.loads(raw[len(CKPT_MAGIC):nl])
    body = raw[nl + 1:]
    if len(body) != header["body_bytes"] or hashlib.sha256(body).hexdigest() != header["sha256"]:
        raise DataError(f"{path}: checkpoint body fails its checksum")
    code = "<f4" if header["dtype"] == "float32" else "<f8"
    arrays, off = {}, 0
    width = np.dtype(code).itemsize
    for seg in header["segments"]:
        n = seg["count"]
        arrays[seg["name"]] = np.frombuffer(body, dtype=code, count=n, offset=off).copy()
        off += n * width
    return header, arrays


def _build_model(header, arrays, expect):
    cfg = ModelConfig.from_dict(header["model"])
    if expect is not None and expect != cfg:
        raise DataError(f"checkpoint model {cfg} does not match expected {expect}")
    model = InrModel(cfg).to(_FROM_NAME[header["dtype"]])
    spec = [[n, list(s)] for n, s in param_spec(model)]
    if spec != header["parameters"]:
        raise DataError("checkpoint parameter layout does not match the model")
    if arrays["params"].size != param_count(model):
        raise DataError("checkpoint parameter count mismatch")
    set_flat_params(model, torch.from_numpy(arrays["params"]))
    return model


def load_checkpoint(path, expect: ModelConfig | None = None):
    """Rebuild the model; returns (model, header). ``expect`` enforces matching sizes/omega."""
    header, arrays = _read_checkpoint(path)
    return _build_model(header, arrays, expect), header


def load_train_state(path, config):
    """Model + optimizer + epoch counter for resuming training."""
    from .train import new_state

    header, arrays = _read_checkpoint(path)
    if "train" not in header:
        raise DataError(f"{path} carries no optimizer state")
    state = new_state(config)
    state.model = _build_model(header, arrays, config.model_config())
    state.optimizer.load_state_dict({
        "m": torch.from_numpy(arrays["adam_m"]),
        "v": torch.from_numpy(arrays["adam_v"]),
        "step": header["train"]["adam_step"],
    })
    state.epoch = header["train"]["epoch"]
    state.history = list(header["train"]["history"])
    return state


# -- logs and reports -------------------------------------------------------

METRIC_COLUMNS = ("epoch", "pos", "jacobian", "latent", "total")


def write_csv(path, rows, columns):
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    _atomic_write(Path(path), buf.getvalue().encode())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
