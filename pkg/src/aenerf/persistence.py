"""Checkpoint and configuration serialization with integrity guarantees.

Single-file container, dependency-free and byte-stable:

    magic "AENERFCK" | u32 version | u64 header length | header JSON |
    raw tensor payload | sha256 of everything before the hash

The header is canonical JSON (sorted keys) holding the run config, stage
markers and the name/dtype/shape of every payload tensor in order; floats
are stored as 32-bit little-endian, RNG states as raw bytes. Writes are
atomic (temp file + rename) so a crash never leaves a loadable-but-corrupt
file, and saving the same state twice yields identical bytes and hash.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, config_from_dict
from .inference import InferenceModel
from .training import TrainState, new_train_state

MAGIC = b"AENERFCK"
FORMAT_VERSION = 1

_DTYPES = {
    "float32": (torch.float32, np.float32),
    "int64": (torch.int64, np.int64),
    "uint8": (torch.uint8, np.uint8),
}


class IoError(OSError):
    pass


class IntegrityError(RuntimeError):
    """Checkpoint bytes fail the hash, length or structure checks."""


class VersionError(RuntimeError):
    """Checkpoint was written by an incompatible format version."""


class ConfigConflict(RuntimeError):
    """User-supplied config disagrees with the checkpoint's; lists the keys."""


def config_fingerprint(config: RunConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _dtype_name(t: torch.Tensor) -> str:
    for name, (tdt, _) in _DTYPES.items():
        if t.dtype == tdt:
            return name
    raise IoError(f"unsupported tensor dtype {t.dtype}")


_NET_NAMES = ("field_net", "encoder", "discriminator", "swap_classifier", "perceptual")
_OPT_NAMES = ("opt_field", "opt_encoder", "opt_disc", "opt_swap")


def _collect_tensors(state: TrainState) -> list[tuple[str, torch.Tensor]]:
    """Deterministically ordered (name, tensor) pairs covering the full state."""
    tensors: list[tuple[str, torch.Tensor]] = []
    for net_name in _NET_NAMES:
        net = getattr(state, net_name)
        for key, value in net.state_dict().items():
            tensors.append((f"{net_name}/{key}", value.detach().to(torch.float32)))
    for opt_name in _OPT_NAMES:
        opt = getattr(state, opt_name)
        for idx, entry in sorted(opt.state_dict()["state"].items()):
            for key in sorted(entry):
                value = entry[key]
                if not torch.is_tensor(value):
                    value = torch.tensor(float(value))
                tensors.append((f"{opt_name}/{idx}/{key}", value.detach().to(torch.float32)))
    for stream, gen in sorted(state.generators.items()):
        tensors.append((f"rng/{stream}", gen.get_state()))
    return tensors


def save_checkpoint(state: TrainState, path: str | Path) -> str:
    """Atomically write the state; returns the content hash (hex)."""
    tensors = _collect_tensors(state)
    header = {
        "format_version": FORMAT_VERSION,
        "config": state.config.to_dict(),
        "stage": state.stage,
        "steps_done": state.steps_done,
        "tensors": [
            {"name": name, "dtype": _dtype_name(t), "shape": list(t.shape)}
            for name, t in tensors
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(t.contiguous().numpy().astype(_DTYPES[_dtype_name(t)][1], copy=False).tobytes() for _, t in tensors)
    body = (
        MAGIC
        + FORMAT_VERSION.to_bytes(4, "little")
        + len(header_bytes).to_bytes(8, "little")
        + header_bytes
        + payload
    )
    digest = hashlib.sha256(body).digest()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(body + digest)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_name, path)
    except OSError as exc:
        raise IoError(f"cannot write checkpoint to {path}: {exc}") from exc
    return digest.hex()


def _read_and_verify(path: Path) -> tuple[dict, bytes, str]:
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < len(MAGIC) + 12 + 32:
        raise IntegrityError("file too short to be a checkpoint")
    if blob[: len(MAGIC)] != MAGIC:
        raise IntegrityError("bad magic; not a checkpoint file")
    version = int.from_bytes(blob[8:12], "little")
    if version != FORMAT_VERSION:
        raise VersionError(f"checkpoint format {version}, supported {FORMAT_VERSION}")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("content hash mismatch; checkpoint corrupt")
    header_len = int.from_bytes(blob[12:20], "little")
    header_start = 20
    header_end = header_start + header_len
    if header_end > len(body):
        raise IntegrityError("truncated header")
    try:
        header = json.loads(body[header_start:header_end])
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"unparseable header: {exc}") from exc
    return header, body[header_end:], hashlib.sha256(body).hexdigest()


def _diff_configs(a: dict, b: dict, prefix: str = "") -> list[str]:
    keys = sorted(set(a) | set(b))
    out = []
    for key in keys:
        va, vb = a.get(key), b.get(key)
        if isinstance(va, dict) and isinstance(vb, dict):
            out += _diff_configs(va, vb, f"{prefix}{key}.")
        elif va != vb:
            out.append(f"{prefix}{key}: checkpoint={va!r} supplied={vb!r}")
    return out


def load_checkpoint(path: str | Path, expected_config: RunConfig | None = None) -> TrainState:
    """Verify, rebuild the networks from the stored config, load all tensors.

    When ``expected_config`` is given it must match the stored config
    exactly, otherwise a :class:`ConfigConflict` lists the differing keys.
    """
    path = Path(path)
    if not path.exists():
        raise IoError(f"checkpoint {path} does not exist")
    header, payload, _ = _read_and_verify(path)
    config = config_from_dict(header["config"])
    if expected_config is not None:
        diffs = _diff_configs(header["config"], expected_config.to_dict())
        if diffs:
            raise ConfigConflict("config mismatch:\n  " + "\n  ".join(diffs))

    arrays: dict[str, torch.Tensor] = {}
    offset = 0
    for meta in header["tensors"]:
        tdt, ndt = _DTYPES[meta["dtype"]]
        count = int(np.prod(meta["shape"])) if meta["shape"] else 1
        nbytes = count * np.dtype(ndt).itemsize
        if offset + nbytes > len(payload):
            raise IntegrityError(f"payload truncated at tensor {meta['name']}")
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype=ndt).copy()
        arrays[meta["name"]] = torch.from_numpy(arr).reshape(meta["shape"]).to(tdt)
        offset += nbytes
    if offset != len(payload):
        raise IntegrityError("payload has trailing bytes")

    state = new_train_state(config)
    state.stage = int(header["stage"])
    state.steps_done = {k: int(v) for k, v in header["steps_done"].items()}
    for net_name in _NET_NAMES:
        net = getattr(state, net_name)
        loaded = {
            key[len(net_name) + 1 :]: value
            for key, value in arrays.items()
            if key.startswith(net_name + "/")
        }
        expected = net.state_dict()
        if set(loaded) != set(expected):
            raise IntegrityError(f"tensor set mismatch for {net_name}")
        for key, value in loaded.items():
            loaded[key] = value.to(expected[key].dtype)
        net.load_state_dict(loaded)
    for opt_name in _OPT_NAMES:
        opt = getattr(state, opt_name)
        entries: dict[int, dict[str, torch.Tensor]] = {}
        prefix = opt_name + "/"
        for key, value in arrays.items():
            if key.startswith(prefix):
                _, idx, field_name = key.split("/")
                entries.setdefault(int(idx), {})[field_name] = value
        if entries:
            sd = opt.state_dict()
            sd["state"] = entries
            opt.load_state_dict(sd)
    for stream, gen in state.generators.items():
        gen.set_state(arrays[f"rng/{stream}"].to(torch.uint8))
    return state


def load_inference_model(path: str | Path) -> InferenceModel:
    """Load just the inference-facing parts of a checkpoint."""
    path = Path(path)
    header, _, digest = _read_and_verify(path)
    state = load_checkpoint(path)
    return InferenceModel(
        config=state.config,
        encoder=state.encoder,
        field_net=state.field_net,
        checkpoint_hash=digest[:16],
        stage=state.stage,
    )
