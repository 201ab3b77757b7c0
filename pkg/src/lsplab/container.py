"""Single-file container for parameter sets ("LSP1" format).

Layout: 4-byte magic ``LSP1``, little-endian uint32 header length, a UTF-8
JSON header, then the raw little-endian array payload in manifest order.
The header carries the format version, the object kind, the storage
precision, the architecture configuration, a free-form ``meta`` dict
(shape id, family, seed, ...), and the array manifest (name, shape, byte
offset into the payload).

Files are written atomically (temp file in the target directory, then
rename). Arrays round-trip bitwise at the declared precision; ``float32``
(the default) halves the file size, ``float64`` is lossless.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .encoder import BaseNetParams, EncoderParams
from .dataset import ShapeDelta, SharedPrior
from .hypernet import HyperConfig, HyperParams
from .sdf import LevelSetParams, SdfConfig

MAGIC = b"LSP1"
FORMAT_VERSION = 1
_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}
KINDS = ("theta", "hyper", "prior", "delta", "encoder")


class ContainerError(ValueError):
    """Raised for malformed or mismatched container files."""


def _check(cond, message):
    if not cond:
        raise ContainerError(message)


# ---------------------------------------------------------------------------
# low-level read/write


def _write_file(path, header: dict, arrays: list, precision: str):
    _check(precision in _DTYPES, f"unknown precision {precision!r}")
    dtype = _DTYPES[precision]
    manifest = []
    chunks = []
    offset = 0
    for name, arr in arrays:
        data = np.ascontiguousarray(np.asarray(arr, dtype=np.float64),
                                    dtype=dtype)
        manifest.append({"name": name, "shape": list(data.shape),
                         "offset": offset})
        chunks.append(data.tobytes())
        offset += data.nbytes
    header = dict(header)
    header["format"] = FORMAT_VERSION
    header["precision"] = precision
    header["arrays"] = manifest
    header["payload_bytes"] = offset
    blob = json.dumps(header, sort_keys=True).encode("utf-8")

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".lsp1-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for chunk in chunks:
                fh.write(chunk)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_header(path) -> dict:
    """Header dict of a container file, payload untouched."""
    with open(path, "rb") as fh:
        _check(fh.read(4) == MAGIC, f"{path}: not an LSP1 container")
        raw = fh.read(4)
        _check(len(raw) == 4, f"{path}: truncated header length")
        (length,) = struct.unpack("<I", raw)
        blob = fh.read(length)
        _check(len(blob) == length, f"{path}: truncated header")
    try:
        header = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: invalid header JSON ({exc})") from exc
    _check(isinstance(header, dict), f"{path}: header must be an object")
    _check(header.get("format") == FORMAT_VERSION,
           f"{path}: unsupported format version {header.get('format')!r}")
    _check(header.get("kind") in KINDS,
           f"{path}: unknown kind {header.get('kind')!r}")
    return header


def _read_file(path):
    header = read_header(path)
    _check(header.get("precision") in _DTYPES,
           f"{path}: unknown precision {header.get('precision')!r}")
    dtype = _DTYPES[header["precision"]]
    with open(path, "rb") as fh:
        fh.seek(4)
        (length,) = struct.unpack("<I", fh.read(4))
        fh.seek(8 + length)
        payload = fh.read()
    _check(len(payload) == header["payload_bytes"],
           f"{path}: payload is {len(payload)} bytes, "
           f"header declares {header['payload_bytes']}")
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        stop = start + count * dtype.itemsize
        _check(stop <= len(payload),
               f"{path}: array {entry['name']!r} exceeds the payload")
        arrays[entry["name"]] = np.frombuffer(
            payload[start:stop], dtype=dtype).reshape(shape).astype(np.float64)
    return header, arrays


# ---------------------------------------------------------------------------
# config encoding


def _sdf_to_json(cfg: SdfConfig) -> dict:
    return {"depth": cfg.depth, "hidden": cfg.hidden, "skip_at": cfg.skip_at,
            "beta": cfg.beta, "sphere_radius": cfg.sphere_radius}


def _sdf_from_json(d: dict) -> SdfConfig:
    return SdfConfig(depth=int(d["depth"]), hidden=int(d["hidden"]),
                     skip_at=int(d["skip_at"]), beta=float(d["beta"]),
                     sphere_radius=float(d["sphere_radius"]))


def _hyper_to_json(cfg: HyperConfig) -> dict:
    return {"sdf": _sdf_to_json(cfg.sdf), "scope": cfg.scope,
            "latent_rows": cfg.latent_rows, "latent_cols": cfg.latent_cols,
            "eta_hidden": list(cfg.eta_hidden)}


def _hyper_from_json(d: dict) -> HyperConfig:
    return HyperConfig(sdf=_sdf_from_json(d["sdf"]), scope=d["scope"],
                       latent_rows=int(d["latent_rows"]),
                       latent_cols=int(d["latent_cols"]),
                       eta_hidden=tuple(int(v) for v in d["eta_hidden"]))


# ---------------------------------------------------------------------------
# per-kind save/load


def save_params(path, params: LevelSetParams, precision: str = "float32",
                meta: dict | None = None):
    """Write one field parameter set (kind ``theta``)."""
    params.validate()
    arrays = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases), start=1):
        arrays.append((f"W{i}", w))
        arrays.append((f"b{i}", b))
    _write_file(path, {"kind": "theta", "config": _sdf_to_json(params.config),
                       "meta": meta or {}}, arrays, precision)


def load_params(path):
    """Read a ``theta`` container; returns (LevelSetParams, meta dict)."""
    header, arrays = _read_file(path)
    _check(header["kind"] == "theta",
           f"{path}: expected kind 'theta', found {header['kind']!r}")
    cfg = _sdf_from_json(header["config"])
    try:
        weights = [arrays[f"W{i}"] for i in range(1, cfg.depth + 1)]
        biases = [arrays[f"b{i}"] for i in range(1, cfg.depth + 1)]
    except KeyError as exc:
        raise ContainerError(f"{path}: missing array {exc}") from exc
    try:
        params = LevelSetParams(weights, biases, cfg).validate()
    except ValueError as exc:
        raise ContainerError(f"{path}: {exc}") from exc
    return params, header.get("meta", {})


def _hyper_arrays(hyper: HyperParams) -> list:
    arrays = []
    for i, (w, b) in enumerate(zip(hyper.eta_weights, hyper.eta_biases),
                               start=1):
        arrays.append((f"etaW{i}", w))
        arrays.append((f"etab{i}", b))
    arrays += [("Y", hyper.Y), ("fc1w", hyper.fc1_w),
               ("fc1b", hyper.fc1_b), ("fc2w", hyper.fc2_w)]
    return arrays


def _hyper_from_arrays(cfg: HyperConfig, arrays: dict, path) -> HyperParams:
    n_eta = len(cfg.eta_hidden) + 1
    try:
        hyper = HyperParams(
            cfg,
            [arrays[f"etaW{i}"] for i in range(1, n_eta + 1)],
            [arrays[f"etab{i}"] for i in range(1, n_eta + 1)],
            arrays["Y"], arrays["fc1w"], arrays["fc1b"], arrays["fc2w"])
    except KeyError as exc:
        raise ContainerError(f"{path}: missing array {exc}") from exc
    try:
        return hyper.validate()
    except ValueError as exc:
        raise ContainerError(f"{path}: {exc}") from exc


def save_hyper(path, hyper: HyperParams, precision: str = "float32",
               meta: dict | None = None):
    """Write a pose-conditioned generator alone (kind ``hyper``)."""
    _write_file(path, {"kind": "hyper",
                       "config": _hyper_to_json(hyper.config),
                       "meta": meta or {}}, _hyper_arrays(hyper), precision)


def load_hyper(path):
    header, arrays = _read_file(path)
    _check(header["kind"] == "hyper",
           f"{path}: expected kind 'hyper', found {header['kind']!r}")
    cfg = _hyper_from_json(header["config"])
    return _hyper_from_arrays(cfg, arrays, path), header.get("meta", {})


def save_prior(path, prior: SharedPrior, precision: str = "float32",
               meta: dict | None = None):
    """Write a trained shared prior (kind ``prior``)."""
    arrays = _hyper_arrays(prior.hyper)
    for i, (w, b) in enumerate(zip(prior.mu_weights, prior.mu_biases),
                               start=1):
        if w is not None:
            arrays.append((f"muW{i}", w))
        if b is not None:
            arrays.append((f"mub{i}", b))
    _write_file(path, {"kind": "prior",
                       "config": _hyper_to_json(prior.config),
                       "meta": meta or {}}, arrays, precision)


def load_prior(path):
    header, arrays = _read_file(path)
    _check(header["kind"] == "prior",
           f"{path}: expected kind 'prior', found {header['kind']!r}")
    cfg = _hyper_from_json(header["config"])
    hyper = _hyper_from_arrays(cfg, arrays, path)
    mu_w, mu_b = [], []
    for i in range(1, cfg.sdf.depth + 1):
        mu_w.append(arrays.get(f"muW{i}"))
        mu_b.append(arrays.get(f"mub{i}"))
    return SharedPrior(hyper, mu_w, mu_b), header.get("meta", {})


def save_delta(path, delta: ShapeDelta, precision: str = "float32",
               meta: dict | None = None):
    """Write one shape's parameter offsets (kind ``delta``)."""
    arrays = [("deltaY", delta.deltaY)]
    for i, (w, b) in enumerate(zip(delta.delta_weights, delta.delta_biases),
                               start=2):
        arrays.append((f"dW{i}", w))
        arrays.append((f"db{i}", b))
    full_meta = dict(meta or {})
    full_meta.setdefault("shape_id", delta.shape_id)
    if delta.fit_quality is not None:
        full_meta.setdefault("fit_quality", delta.fit_quality)
    _write_file(path, {"kind": "delta",
                       "config": _hyper_to_json(delta.config),
                       "meta": full_meta}, arrays, precision)


def load_delta(path):
    header, arrays = _read_file(path)
    _check(header["kind"] == "delta",
           f"{path}: expected kind 'delta', found {header['kind']!r}")
    cfg = _hyper_from_json(header["config"])
    meta = header.get("meta", {})
    try:
        dw = [arrays[f"dW{i}"] for i in range(2, cfg.sdf.depth + 1)]
        db = [arrays[f"db{i}"] for i in range(2, cfg.sdf.depth + 1)]
        delta = ShapeDelta(cfg, arrays["deltaY"], dw, db,
                           shape_id=str(meta.get("shape_id", "")),
                           fit_quality=meta.get("fit_quality"))
    except KeyError as exc:
        raise ContainerError(f"{path}: missing array {exc}") from exc
    return delta, meta


_BASENET_FIELDS = ("w1", "b1", "w2", "b2", "gamma", "beta",
                   "run_mean", "run_var")
_BRANCHES = ("net1", "pool2a", "pool2b", "net3")


def save_encoder(path, enc: EncoderParams, precision: str = "float32",
                 meta: dict | None = None):
    """Write the parameter-space feature encoder (kind ``encoder``)."""
    arrays = []
    initialized = {}
    for branch in _BRANCHES:
        net = getattr(enc, branch)
        initialized[branch] = bool(net.initialized)
        for name in _BASENET_FIELDS:
            arrays.append((f"{branch}.{name}", getattr(net, name)))
    arrays += [("cls_w", enc.cls_w), ("cls_b", enc.cls_b)]
    _write_file(path, {"kind": "encoder",
                       "config": {"sdf": _sdf_to_json(enc.sdf),
                                  "n_classes": enc.n_classes,
                                  "pe_bands": enc.pe_bands,
                                  "hidden": enc.hidden,
                                  "initialized": initialized},
                       "meta": meta or {}}, arrays, precision)


def load_encoder(path):
    header, arrays = _read_file(path)
    _check(header["kind"] == "encoder",
           f"{path}: expected kind 'encoder', found {header['kind']!r}")
    cfg = header["config"]
    nets = {}
    try:
        for branch in _BRANCHES:
            nets[branch] = BaseNetParams(
                *(arrays[f"{branch}.{name}"] for name in _BASENET_FIELDS),
                initialized=bool(cfg["initialized"][branch]))
        enc = EncoderParams(_sdf_from_json(cfg["sdf"]),
                            int(cfg["n_classes"]), int(cfg["pe_bands"]),
                            int(cfg["hidden"]), nets["net1"], nets["pool2a"],
                            nets["pool2b"], nets["net3"],
                            arrays["cls_w"], arrays["cls_b"])
    except KeyError as exc:
        raise ContainerError(f"{path}: missing entry {exc}") from exc
    return enc, header.get("meta", {})


_LOADERS = {"theta": load_params, "hyper": load_hyper, "prior": load_prior,
            "delta": load_delta, "encoder": load_encoder}


def load(path):
    """Read any container; returns (kind, object, meta dict)."""
    kind = read_header(path)["kind"]
    obj, meta = _LOADERS[kind](path)
    return kind, obj, meta
