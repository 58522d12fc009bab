"""Checkpoints and the self-describing tensor container they are stored in.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
(format version, metadata, tensor table), then the raw little-endian tensor
bytes in table order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .encoder import Encoder, EncoderConfig, load_embedding_file, with_specials

MAGIC = b"PRDTCKPT"
FORMAT_VERSION = 1
_DTYPES = {"float64": "<f8", "int64": "<i8"}


class CheckpointError(ValueError):
    pass


def pack(meta: dict, tensors: dict[str, np.ndarray]) -> bytes:
    table, blobs, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        kind = "int64" if np.issubdtype(arr.dtype, np.integer) else "float64"
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[kind]).tobytes()
        table.append({"name": name, "dtype": kind, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "meta": meta, "tensors": table},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(blobs)


def unpack(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < 16 or data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')!r}")
    body = data[16 + hlen :]
    tensors = {}
    for entry in header["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(body):
            raise CheckpointError(f"truncated checkpoint: tensor {entry['name']} is incomplete")
        arr = np.frombuffer(body[start : start + n], dtype=_DTYPES[entry["dtype"]])
        expected = int(np.prod(entry["shape"], dtype=np.int64))
        if arr.size != expected:
            raise CheckpointError(f"tensor {entry['name']} has {arr.size} values, header says {entry['shape']}")
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    total = sum(e["nbytes"] for e in header["tensors"])
    if len(body) != total:
        raise CheckpointError(f"checkpoint body is {len(body)} bytes, header describes {total}")
    return header["meta"], tensors


def state_to_numpy(module: torch.nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def load_numpy_state(module: torch.nn.Module, tensors: dict[str, np.ndarray], prefix: str = "") -> None:
    own = module.state_dict()
    picked = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
    if set(picked) != set(own):
        missing = sorted(set(own) - set(picked))
        extra = sorted(set(picked) - set(own))
        raise CheckpointError(f"parameter mismatch (missing {missing[:5]}, unexpected {extra[:5]})")
    for k, v in picked.items():
        if tuple(own[k].shape) != v.shape:
            raise CheckpointError(f"shape mismatch for {prefix}{k}: file {v.shape}, model {tuple(own[k].shape)}")
    module.load_state_dict({k: torch.from_numpy(v).to(own[k].dtype) for k, v in picked.items()})


@dataclass
class Checkpoint:
    config: EncoderConfig
    parameters: dict[str, np.ndarray]
    step: int = 0
    total_steps: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def step_fraction(self) -> float:
        return self.step / self.total_steps if self.total_steps else 1.0

    def build(self) -> Encoder:
        encoder = Encoder(self.config)
        load_numpy_state(encoder, self.parameters)
        encoder.eval()
        return encoder


def init_checkpoint(cfg: EncoderConfig, seed: int, surfaces=None) -> Checkpoint:
    """Fresh, seeded encoder weights at step 0.  With ``cfg.embedding_file``
    set, ``surfaces`` (the vocabulary) selects the embedding rows."""
    torch.manual_seed(seed)
    encoder = Encoder(cfg)
    if cfg.embedding_file:
        if surfaces is None:
            raise ValueError("external embeddings need the vocabulary surfaces")
        table = load_embedding_file(cfg.embedding_file, surfaces, cfg.emb_dim, seed)
        with torch.no_grad():
            encoder.embed.weight.copy_(torch.from_numpy(table))
    return Checkpoint(cfg, state_to_numpy(encoder), 0, 0)


def encode(ck: Checkpoint, token_ids) -> np.ndarray:
    """Features for one id sequence, special positions included: ``(T + 2, d)``."""
    if len(token_ids) + 2 > ck.config.max_seq_len:
        raise ValueError(
            f"{len(token_ids)} tokens plus 2 special positions exceed max_seq_len {ck.config.max_seq_len}"
        )
    encoder = ck.build()
    ids = torch.tensor([with_specials(token_ids)], dtype=torch.long)
    with torch.no_grad():
        return encoder(ids)[0].numpy()


def save_checkpoint(ck: Checkpoint) -> bytes:
    meta = {
        "kind": "encoder",
        "config": ck.config.to_dict(),
        "step": ck.step,
        "total_steps": ck.total_steps,
        "step_fraction": ck.step_fraction,
        "extra": ck.meta,
    }
    return pack(meta, ck.parameters)


def load_checkpoint(data: bytes) -> Checkpoint:
    meta, tensors = unpack(data)
    if meta.get("kind") != "encoder":
        raise CheckpointError(f"expected an encoder checkpoint, found {meta.get('kind')!r}")
    ck = Checkpoint(EncoderConfig.from_dict(meta["config"]), tensors, meta["step"], meta["total_steps"], meta.get("extra", {}))
    load_numpy_state(Encoder(ck.config), tensors)  # shape check against the config
    return ck
