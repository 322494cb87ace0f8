"""Versioned parameter checkpoints stored as ``.npz`` archives.

Layout: ``__format_version__``, ``__fingerprint__`` (architecture digest),
``__config__`` (full RunConfig as JSON) and one float64 array per parameter.
"""
from __future__ import annotations

import json
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .errors import CheckpointError, CompatibilityError
from .model import MatchingModel, build_model

FORMAT_VERSION = 1
_META = ("__format_version__", "__fingerprint__", "__config__")


def save_checkpoint(model: MatchingModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = model.named_arrays()
    clash = set(arrays) & set(_META)
    if clash:
        raise CheckpointError(f"parameter names collide with metadata: {clash}")
    payload = {
        "__format_version__": np.array(FORMAT_VERSION),
        "__fingerprint__": np.array(model.config.fingerprint()),
        "__config__": np.array(json.dumps(model.config.to_dict(), sort_keys=True)),
        **arrays,
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        # fixed entry timestamps so identical models give identical bytes
        with os.fdopen(fd, "wb") as fh, zipfile.ZipFile(fh, "w", zipfile.ZIP_STORED) as zf:
            for name, arr in payload.items():
                info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
                with zf.open(info, "w") as entry:
                    np.lib.format.write_array(entry, np.asanyarray(arr), allow_pickle=False)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_checkpoint(path) -> tuple[RunConfig, str, dict[str, np.ndarray]]:
    """Parse a checkpoint fully into memory without building a model."""
    try:
        with np.load(path, allow_pickle=False) as z:
            data = {k: z[k] for k in z.files}
    except FileNotFoundError:
        raise CheckpointError(f"no such checkpoint: {path}") from None
    except (zipfile.BadZipFile, ValueError, OSError, EOFError, KeyError) as exc:
        raise CheckpointError(f"corrupted checkpoint {path}: {exc}") from None
    missing = [k for k in _META if k not in data]
    if missing:
        raise CheckpointError(f"checkpoint {path} lacks {missing}")
    version = int(data.pop("__format_version__"))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {version}")
    fingerprint = str(data.pop("__fingerprint__"))
    try:
        config = RunConfig.from_dict(json.loads(str(data.pop("__config__"))))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"checkpoint {path} has an unreadable config: {exc}") from None
    return config, fingerprint, data


def load_checkpoint(path, config: RunConfig | None = None) -> MatchingModel:
    """Rebuild the model stored at ``path``.

    With ``config`` given, the checkpoint's architecture fingerprint must
    match it; the returned model then carries ``config`` (so non-architectural
    settings such as ``top_k`` or toggled losses come from the caller).
    """
    stored, fingerprint, arrays = read_checkpoint(path)
    if fingerprint != stored.fingerprint():
        raise CheckpointError(f"checkpoint {path} fingerprint does not match its own config")
    if config is not None and config.fingerprint() != fingerprint:
        raise CompatibilityError(
            f"checkpoint architecture {fingerprint} does not match active config {config.fingerprint()}"
        )
    model = build_model(config or stored)
    expected = model.state_dict()
    if set(expected) != set(arrays):
        raise CompatibilityError("checkpoint tensors do not match the model's parameters")
    for k, v in expected.items():
        if tuple(v.shape) != arrays[k].shape:
            raise CompatibilityError(f"tensor {k}: checkpoint shape {arrays[k].shape} != {tuple(v.shape)}")
    model.load_state_dict({k: torch.from_numpy(np.array(a, dtype=np.float64)) for k, a in arrays.items()})
    return model


def checkpoint_element_count(path) -> int:
    _, _, arrays = read_checkpoint(path)
    return int(sum(a.size for a in arrays.values()))
