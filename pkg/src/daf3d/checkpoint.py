"""Single-file checkpoint container.

Layout::

    b"DAF3DCKP"                      8-byte magic
    uint32 LE                        format version
    uint64 LE                        manifest length in bytes
    manifest                         UTF-8 JSON
    payload                          concatenated little-endian float32 blocks

The manifest lists every named block (``name``, ``shape``, ``offset``,
``nbytes``) plus the epoch, the optimizer hyperparameters and step counts,
and a snapshot of the training configuration.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

MAGIC = b"DAF3DCKP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_state: dict                      # name -> float32 ndarray
    optimizer_state: dict = field(default_factory=dict)   # name -> float32 ndarray
    optimizer_meta: dict = field(default_factory=dict)
    epoch: int = 0
    config: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def capture(cls, model, optimizer=None, epoch=0, config=None):
        state = {k: v.detach().cpu().numpy().astype("<f4")
                 for k, v in model.state_dict().items()}
        opt_state, opt_meta = {}, {}
        if optimizer is not None:
            names = {id(p): n for n, p in model.named_parameters()}
            steps = {}
            for group in optimizer.param_groups:
                for p in group["params"]:
                    st = optimizer.state.get(p)
                    if not st:
                        continue
                    name = names[id(p)]
                    for key, val in st.items():
                        if key == "step":
                            steps[name] = int(val)
                        else:
                            opt_state[f"{name}/{key}"] = val.detach().cpu().numpy().astype("<f4")
            opt_meta = {
                "type": type(optimizer).__name__,
                "param_groups": [{k: v for k, v in g.items() if k != "params"}
                                 for g in optimizer.param_groups],
                "steps": steps,
            }
        return cls(state, opt_state, _jsonable(opt_meta), int(epoch), _jsonable(config or {}))

    def load_into(self, model):
        ref = model.state_dict()
        missing = set(ref) - set(self.model_state)
        extra = set(self.model_state) - set(ref)
        if missing or extra:
            raise CheckpointError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        new = {}
        for k, v in ref.items():
            arr = self.model_state[k]
            if tuple(arr.shape) != tuple(v.shape):
                raise CheckpointError(f"{k}: shape {arr.shape} != model shape {tuple(v.shape)}")
            new[k] = torch.from_numpy(np.array(arr, dtype=np.float32)).to(v.dtype)
        model.load_state_dict(new)
        return model

    def restore_optimizer(self, optimizer, model):
        if not self.optimizer_meta:
            return optimizer
        for group, saved in zip(optimizer.param_groups, self.optimizer_meta.get("param_groups", [])):
            for k, v in saved.items():
                group[k] = tuple(v) if isinstance(v, list) else v
        steps = self.optimizer_meta.get("steps", {})
        for name, p in model.named_parameters():
            if name not in steps:
                continue
            st = {"step": torch.tensor(float(steps[name]))}
            prefix = name + "/"
            for key, arr in self.optimizer_state.items():
                if key.startswith(prefix):
                    st[key[len(prefix):]] = torch.from_numpy(np.array(arr, dtype=np.float32)).to(p.dtype)
            optimizer.state[p] = st
        return optimizer


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: o.item() if isinstance(o, np.generic) else str(o)))


def save_checkpoint(path, ckpt: Checkpoint):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blocks, chunks, offset = [], [], 0
    for section, arrays in (("model", ckpt.model_state), ("optim", ckpt.optimizer_state)):
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            blocks.append({"name": f"{section}/{name}", "shape": list(np.shape(arr)),
                           "offset": offset, "nbytes": len(data)})
            chunks.append(data)
            offset += len(data)
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": "float32-le",
        "epoch": ckpt.epoch,
        "optimizer": ckpt.optimizer_meta,
        "config": ckpt.config,
        "blocks": blocks,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQ", FORMAT_VERSION, len(head)))
            fh.write(head)
            for c in chunks:
                fh.write(c)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version > FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} is newer than supported {FORMAT_VERSION}")
    try:
        manifest = json.loads(raw[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest ({exc})") from exc
    payload = memoryview(raw)[20 + hlen:]
    model_state, opt_state = {}, {}
    for b in manifest["blocks"]:
        end = b["offset"] + b["nbytes"]
        if end > len(payload):
            raise CheckpointError(f"{path}: block {b['name']} truncated")
        arr = np.frombuffer(payload[b["offset"]:end], dtype="<f4").reshape(b["shape"]).copy()
        section, _, name = b["name"].partition("/")
        (model_state if section == "model" else opt_state)[name] = arr
    return Checkpoint(model_state, opt_state, manifest.get("optimizer", {}),
                      manifest.get("epoch", 0), manifest.get("config", {}), version)
