"""Binary checkpoint container.

Layout::

    8 bytes   magic b"STDMMFCK"
    4 bytes   format version, uint32 little-endian
    8 bytes   manifest length in bytes, uint64 little-endian
    N bytes   manifest, UTF-8 JSON (sorted keys)
    ...       payload: float32 little-endian tensors, back to back

The manifest holds the config snapshot, epoch, RNG state (hex) and a tensor
table of ``{name, dtype, shape, offset, nbytes}`` with offsets relative to
the start of the payload. ``dtype`` is the in-memory dtype to restore; every
payload is stored as float32.
"""
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch

from ..errors import CheckpointError

MAGIC = b"STDMMFCK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ")
_DTYPES = {"float32": torch.float32, "float64": torch.float64, "int64": torch.int64}
OPTIM_PREFIX = "optimizer."


@dataclass
class Checkpoint:
    config: dict
    tensors: Dict[str, torch.Tensor]
    optimizer: Dict[str, torch.Tensor] = field(default_factory=dict)
    epoch: int = 0
    rng_state: str = ""
    format_version: int = FORMAT_VERSION


def _dtype_name(t):
    for name, dt in _DTYPES.items():
        if t.dtype == dt:
            return name
    raise CheckpointError(f"unsupported tensor dtype {t.dtype}")


def encode(ckpt: Checkpoint) -> bytes:
    table = []
    chunks = []
    offset = 0
    items = [(k, ckpt.tensors[k]) for k in sorted(ckpt.tensors)]
    items += [(OPTIM_PREFIX + k, ckpt.optimizer[k]) for k in sorted(ckpt.optimizer)]
    for name, t in items:
        t = t.detach().cpu()
        data = t.to(torch.float32).contiguous().numpy().astype("<f4", copy=False).tobytes()
        table.append({"name": name, "dtype": _dtype_name(t), "shape": list(t.shape),
                      "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    manifest = {
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "tensors": table,
    }
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, ckpt.format_version, len(text)) + text + b"".join(chunks)


def decode(blob: bytes) -> Checkpoint:
    if len(blob) < _HEADER.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version, mlen = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic bytes {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version} (expected {FORMAT_VERSION})")
    start = _HEADER.size
    if len(blob) < start + mlen:
        raise CheckpointError("truncated manifest")
    try:
        manifest = json.loads(blob[start:start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable manifest: {exc}") from None
    payload = memoryview(blob)[start + mlen:]
    tensors, optim, problems = {}, {}, []
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        off, nbytes = entry["offset"], entry["nbytes"]
        count = int(np.prod(shape)) if shape else 1
        if nbytes != 4 * count:
            problems.append(f"{name}: byte count {nbytes} does not match shape {list(shape)}")
            continue
        if off + nbytes > len(payload):
            problems.append(f"{name}: payload truncated")
            continue
        if entry["dtype"] not in _DTYPES:
            problems.append(f"{name}: unknown dtype {entry['dtype']}")
            continue
        arr = np.frombuffer(payload[off:off + nbytes], dtype="<f4").reshape(shape)
        t = torch.from_numpy(arr.astype(np.float32)).to(_DTYPES[entry["dtype"]])
        if name.startswith(OPTIM_PREFIX):
            optim[name[len(OPTIM_PREFIX):]] = t
        else:
            tensors[name] = t
    if problems:
        raise CheckpointError("corrupt checkpoint", problems)
    return Checkpoint(config=manifest["config"], tensors=tensors, optimizer=optim,
                      epoch=manifest["epoch"], rng_state=manifest["rng_state"],
                      format_version=version)


def save_checkpoint(ckpt: Checkpoint, path):
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode(ckpt)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from None
    return decode(blob)


def model_tensors(model):
    """Parameters and buffers by name."""
    out = {k: v for k, v in model.named_parameters()}
    out.update({k: v for k, v in model.named_buffers()})
    return out


def optimizer_tensors(model, optimizer):
    names = {id(p): k for k, p in model.named_parameters()}
    out = {}
    for group in optimizer.param_groups:
        for p in group["params"]:
            buf = optimizer.state.get(p, {}).get("momentum_buffer")
            if buf is not None:
                out[names[id(p)] + ".momentum_buffer"] = buf
    return out


def make_checkpoint(model, config, optimizer=None, epoch=0, generator: Optional[torch.Generator] = None):
    rng = generator.get_state().numpy().tobytes().hex() if generator is not None else ""
    return Checkpoint(
        config=config.to_dict(),
        tensors={k: v.detach().clone() for k, v in model_tensors(model).items()},
        optimizer={} if optimizer is None else
        {k: v.detach().clone() for k, v in optimizer_tensors(model, optimizer).items()},
        epoch=epoch,
        rng_state=rng,
    )


def check_against_model(ckpt: Checkpoint, model, strict=True):
    """Problems (missing, unexpected, wrong shape) between a checkpoint and a model."""
    expected = model_tensors(model)
    problems = []
    for name in sorted(set(ckpt.tensors) - set(expected)):
        problems.append(f"unexpected tensor {name}")
    if strict:
        for name in sorted(set(expected) - set(ckpt.tensors)):
            problems.append(f"missing tensor {name}")
    for name in sorted(set(expected) & set(ckpt.tensors)):
        if tuple(expected[name].shape) != tuple(ckpt.tensors[name].shape):
            problems.append(f"{name}: shape {list(ckpt.tensors[name].shape)} "
                            f"but model expects {list(expected[name].shape)}")
    return problems


def restore_model(ckpt: Checkpoint, model, optimizer=None, generator=None, strict=True):
    """Copy tensors into ``model``; nothing is modified unless validation passes."""
    problems = check_against_model(ckpt, model, strict=strict)
    params = dict(model.named_parameters())
    for name in ckpt.optimizer:
        base = name.rsplit(".momentum_buffer", 1)[0]
        if base not in params:
            problems.append(f"optimizer state for unknown parameter {base}")
        elif tuple(params[base].shape) != tuple(ckpt.optimizer[name].shape):
            problems.append(f"optimizer state {name}: wrong shape")
    if problems:
        raise CheckpointError("checkpoint does not match model", problems)
    expected = model_tensors(model)
    with torch.no_grad():
        for name, t in ckpt.tensors.items():
            expected[name].copy_(t.to(expected[name].dtype))
    if optimizer is not None:
        for name, t in ckpt.optimizer.items():
            p = params[name.rsplit(".momentum_buffer", 1)[0]]
            optimizer.state[p]["momentum_buffer"] = t.to(p.dtype).clone()
    if generator is not None and ckpt.rng_state:
        state = torch.frombuffer(bytearray(bytes.fromhex(ckpt.rng_state)), dtype=torch.uint8)
        generator.set_state(state)
    return model


def load_pretrained_backbones(model, path):
    """Load backbone weights (torchvision ResNet naming, no prefix) into both streams.

    Tensors absent from the file keep their current values; unknown names and
    shape mismatches are rejected.
    """
    ckpt = load_checkpoint(path)
    problems = []
    for stream in (model.spatial, model.temporal):
        sub = Checkpoint(config={}, tensors=ckpt.tensors)
        problems = check_against_model(sub, stream, strict=False)
        if problems:
            raise CheckpointError("pretrained backbone does not match", problems)
        restore_model(sub, stream, strict=False)
    return model
