"""Binary encoder checkpoints.

Layout: magic `SPTK1`, u32 length-prefixed JSON block (config + provenance),
named parameter sections (u16 name length, name, u8 ndim, u32 dims, raw
little-endian float32 data), then CRC32 over everything after the magic.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sptk.errors import LoadError
from sptk.numcore import Tensor
from sptk.encoder.model import (
    ElectraModel,
    Encoder,
    EncoderConfig,
    Generator,
    MlmModel,
    backbone_param_shapes,
    generator_param_shapes,
    mlm_head_shapes,
    rtd_head_shapes,
)

MAGIC = b"SPTK1"


@dataclass
class EncoderCheckpoint:
    """Primary encoder weights plus optional objective-specific extras."""

    config: EncoderConfig
    params: dict[str, np.ndarray]
    provenance: dict = field(default_factory=dict)

    def expected_names(self) -> set[str]:
        names = set(backbone_param_shapes(self.config))
        if any(n.startswith("generator.") for n in self.params):
            names |= set(generator_param_shapes(self.config))
        if any(n.startswith("rtd.") for n in self.params):
            names |= set(rtd_head_shapes(self.config.hidden))
        if any(n.startswith("mlm.") for n in self.params):
            names |= set(
                mlm_head_shapes(self.config.hidden, self.config.hidden,
                                self.config.vocab_size)
            )
        return names

    def validate(self) -> None:
        expected = self.expected_names()
        got = set(self.params)
        if got != expected:
            missing = sorted(expected - got)[:5]
            extra = sorted(got - expected)[:5]
            raise LoadError(
                f"parameter names do not close over the config "
                f"(missing {missing}, unexpected {extra})"
            )
        shapes = dict(backbone_param_shapes(self.config))
        shapes.update(generator_param_shapes(self.config))
        shapes.update(rtd_head_shapes(self.config.hidden))
        shapes.update(mlm_head_shapes(self.config.hidden, self.config.hidden,
                                      self.config.vocab_size))
        for name, arr in self.params.items():
            if tuple(arr.shape) != shapes[name]:
                raise LoadError(f"parameter {name} has shape {arr.shape}, "
                                f"expected {shapes[name]}")

    @property
    def has_generator(self) -> bool:
        return any(n.startswith("generator.") for n in self.params)

    @property
    def has_mlm_head(self) -> bool:
        return any(n.startswith("mlm.") for n in self.params)

    def to_encoder(self) -> Encoder:
        params = {
            name: Tensor(self.params[name].copy(), requires_grad=True)
            for name in backbone_param_shapes(self.config)
        }
        return Encoder(self.config, params)

    def to_mlm_model(self) -> MlmModel:
        if not self.has_mlm_head:
            raise LoadError("checkpoint has no MLM head weights")
        enc = self.to_encoder()
        head = {
            name: Tensor(self.params[name].copy(), requires_grad=True)
            for name in mlm_head_shapes(self.config.hidden, self.config.hidden,
                                        self.config.vocab_size)
        }
        return MlmModel(enc, head)

    def to_electra_model(self) -> ElectraModel:
        if not self.has_generator:
            raise LoadError("checkpoint has no generator weights")
        enc = self.to_encoder()
        rtd = {
            name: Tensor(self.params[name].copy(), requires_grad=True)
            for name in rtd_head_shapes(self.config.hidden)
        }
        gen_params = {
            name: Tensor(self.params[name].copy(), requires_grad=True)
            for name in generator_param_shapes(self.config)
        }
        gen = Generator(self.config, gen_params,
                        shared_tok_emb=enc.params["tok_emb"])
        return ElectraModel(enc, rtd, gen)


def checkpoint_from_params(config: EncoderConfig, params: dict[str, Tensor],
                           provenance: dict) -> EncoderCheckpoint:
    arrays = {k: np.asarray(v.data, dtype=np.float32).copy()
              for k, v in params.items()}
    ckpt = EncoderCheckpoint(config=config, params=arrays,
                             provenance=dict(provenance))
    ckpt.validate()
    return ckpt


def save_checkpoint(ckpt: EncoderCheckpoint, path) -> None:
    header = json.dumps(
        {"config": ckpt.config.to_dict(), "provenance": ckpt.provenance},
        sort_keys=True,
    ).encode("utf-8")
    payload = bytearray()
    payload += struct.pack("<I", len(header))
    payload += header
    for name in sorted(ckpt.params):
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
        nb = name.encode("utf-8")
        payload += struct.pack("<H", len(nb))
        payload += nb
        payload += struct.pack("<B", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload += arr.tobytes()
    crc = zlib.crc32(bytes(payload)) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(payload)
        f.write(struct.pack("<I", crc))


def load_checkpoint(path) -> EncoderCheckpoint:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise LoadError(f"{path}: not a SPTK1 checkpoint")
    payload = blob[len(MAGIC) : -4]
    (crc_stored,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise LoadError(f"{path}: CRC mismatch (corrupted or truncated)")
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(payload):
            raise LoadError(f"{path}: truncated checkpoint payload")
        out = payload[pos : pos + n]
        pos += n
        return out

    (header_len,) = struct.unpack("<I", take(4))
    try:
        header = json.loads(take(header_len).decode("utf-8"))
        config = EncoderConfig.from_dict(header["config"])
        provenance = header.get("provenance", {})
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError,
            ValueError) as exc:
        raise LoadError(f"{path}: malformed header ({exc})") from exc
    params: dict[str, np.ndarray] = {}
    while pos < len(payload):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape)
        params[name] = arr.astype(np.float32).copy()
    ckpt = EncoderCheckpoint(config=config, params=params, provenance=provenance)
    ckpt.validate()
    return ckpt
