"""Binary model file I/O.

Layout: magic ``S3D1`` (4 bytes), version byte 0x01, a u64 little-endian
byte length followed by the UTF-8 JSON network config, then every
parameter array in declaration order (each conv layer's weights then
bias), each as a u64 little-endian element count followed by raw
little-endian fp64 values. The round trip is bit-exact.

Training checkpoints use a sidecar ``.opt`` file (magic ``S3DO``) holding
progress metadata and the optimizer's velocity arrays in the same framing.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ModelFormatError
from .network import Network, NetworkConfig, SgdMomentum

MODEL_MAGIC = b"S3D1"
OPT_MAGIC = b"S3DO"
VERSION = 1


def _write_array(fh, arr: np.ndarray) -> None:
    fh.write(struct.pack("<Q", arr.size))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ModelFormatError(f"truncated file while reading {what}")
    return data


def _read_array(fh, shape: tuple[int, ...], what: str) -> np.ndarray:
    (count,) = struct.unpack("<Q", _read_exact(fh, 8, f"{what} length"))
    expected = int(np.prod(shape)) if shape else 0
    if count != expected:
        raise ModelFormatError(f"{what} holds {count} elements, config expects {expected}")
    data = _read_exact(fh, 8 * count, what)
    return np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(shape)


def save_model(network: Network, path: str | Path) -> None:
    path = Path(path)
    payload = json.dumps(network.config.to_json_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for arr in network.parameter_arrays():
            _write_array(fh, arr)


def load_model(path: str | Path) -> Network:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MODEL_MAGIC:
            raise ModelFormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}")
        version = _read_exact(fh, 1, "version")[0]
        if version != VERSION:
            raise ModelFormatError(f"unsupported model version {version}")
        (json_len,) = struct.unpack("<Q", _read_exact(fh, 8, "config length"))
        try:
            config_dict = json.loads(_read_exact(fh, json_len, "config").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ModelFormatError(f"corrupt config payload: {e}") from e
        config = NetworkConfig.from_json_dict(config_dict)
        network = Network(config, rng=None)
        names = network.parameter_names()
        arrays = network.parameter_arrays()
        for name, arr in zip(names, arrays):
            arr[...] = _read_array(fh, arr.shape, name)
        if fh.read(1):
            raise ModelFormatError("trailing bytes after the last parameter array")
    return network


def save_checkpoint(
    network: Network, optimizer: SgdMomentum, path: str | Path, *, epoch: int, step: int
) -> None:
    """Model file plus a sidecar with optimizer state and progress."""
    path = Path(path)
    save_model(network, path)
    meta = json.dumps(
        {
            "epoch": epoch,
            "step": step,
            "learning_rate": optimizer.learning_rate,
            "momentum": optimizer.momentum,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path.with_suffix(path.suffix + ".opt"), "wb") as fh:
        fh.write(OPT_MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)
        velocities = optimizer.velocities or [np.zeros_like(p) for p in network.parameter_arrays()]
        for arr in velocities:
            _write_array(fh, arr)


def load_checkpoint(path: str | Path) -> tuple[Network, SgdMomentum, dict]:
    path = Path(path)
    network = load_model(path)
    opt_path = path.with_suffix(path.suffix + ".opt")
    with open(opt_path, "rb") as fh:
        magic = _read_exact(fh, 4, "optimizer magic")
        if magic != OPT_MAGIC:
            raise ModelFormatError(f"bad optimizer magic {magic!r}")
        version = _read_exact(fh, 1, "optimizer version")[0]
        if version != VERSION:
            raise ModelFormatError(f"unsupported optimizer version {version}")
        (meta_len,) = struct.unpack("<Q", _read_exact(fh, 8, "optimizer metadata length"))
        meta = json.loads(_read_exact(fh, meta_len, "optimizer metadata").decode("utf-8"))
        optimizer = SgdMomentum(meta["learning_rate"], meta["momentum"])
        optimizer.velocities = [
            _read_array(fh, p.shape, name)
            for name, p in zip(network.parameter_names(), network.parameter_arrays())
        ]
    return network, optimizer, meta
