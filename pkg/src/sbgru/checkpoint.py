"""Binary checkpoint container and model (de)serialization.

Layout, all integers little-endian:

    magic "SBGRU1" | uint32 version
    uint64 metadata length | metadata (UTF-8, one "key = value" per line)
    uint64 index length    | index (UTF-8, one entry per line:
                             name TAB encoding TAB shape-csv TAB offset TAB
                             length TAB extras-csv)
    uint64 payload length  | payload bytes

Tensor encodings: raw_f64, raw_f32, grid (packed unsigned grid indices with
per-tensor step/min/bit width) and bitmap_mask (1 bit per connection).
Entries keep their raw payload bytes verbatim, so read -> write round-trips
are byte-identical.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .model import ModelConfig, Seq2SeqModel
from .stochastic import RngStream

__all__ = [
    "FormatError",
    "TensorEntry",
    "Checkpoint",
    "MAGIC",
    "VERSION",
    "ENCODINGS",
    "pack_bits",
    "unpack_bits",
    "raw_entry",
    "grid_entry",
    "bitmap_entry",
    "save_model",
    "load_model",
]

MAGIC = b"SBGRU1"
VERSION = 1
ENCODINGS = ("raw_f64", "raw_f32", "grid", "bitmap_mask")


class FormatError(ValueError):
    """Corrupted or incompatible checkpoint bytes."""


def pack_bits(values: np.ndarray, bits: int) -> bytes:
    """Pack unsigned integers into a little-endian bitstream, ``bits`` bits
    per value."""
    if bits < 1 or bits > 57:
        raise FormatError(f"unsupported bit width {bits}")
    v = np.ascontiguousarray(values, dtype="<u8")
    if v.size and int(v.max()) >= (1 << bits):
        raise FormatError("value does not fit the requested bit width")
    as_bits = np.unpackbits(v.view(np.uint8).reshape(-1, 8), axis=1,
                            bitorder="little")
    return np.packbits(as_bits[:, :bits].reshape(-1), bitorder="little").tobytes()


def unpack_bits(buf: bytes, bits: int, count: int) -> np.ndarray:
    """Inverse of :func:`pack_bits`; returns ``count`` uint64 values."""
    need = (count * bits + 7) // 8
    if len(buf) < need:
        raise FormatError("bit-packed payload is truncated")
    flat = np.unpackbits(np.frombuffer(buf, np.uint8), bitorder="little")
    flat = flat[:count * bits].reshape(count, bits)
    wide = np.zeros((count, 64), dtype=np.uint8)
    wide[:, :bits] = flat
    return np.packbits(wide, axis=1, bitorder="little").view("<u8").reshape(count)


class TensorEntry:
    """One named tensor in the container; holds the encoded payload verbatim
    plus whatever parameters the encoding needs to decode it."""

    def __init__(self, name: str, encoding: str, shape: tuple[int, ...],
                 payload: bytes, extras: dict[str, str] | None = None):
        if encoding not in ENCODINGS:
            raise FormatError(f"unknown encoding {encoding!r}")
        self.name = name
        self.encoding = encoding
        self.shape = tuple(int(s) for s in shape)
        self.payload = payload
        self.extras = dict(extras or {})

    def count(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n


def raw_entry(name: str, arr: np.ndarray, dtype: str = "raw_f64") -> TensorEntry:
    np_dtype = "<f8" if dtype == "raw_f64" else "<f4"
    data = np.ascontiguousarray(arr, dtype=np_dtype)
    return TensorEntry(name, dtype, arr.shape, data.tobytes())


def grid_entry(name: str, values: np.ndarray, mask: np.ndarray | None,
               bits: int, delta: float, mask_name: str = "") -> TensorEntry:
    """Quantized means stored as packed grid indices.

    ``values`` must already lie on the grid (multiples of delta). Only the
    entries selected by ``mask`` are stored; the mask itself travels as a
    separate bitmap entry whose name goes into extras.
    """
    flat = values.reshape(-1)
    if mask is not None:
        flat = flat[mask.reshape(-1) > 0]
    idx = np.floor(flat / delta + 0.5).astype(np.int64) if flat.size else \
        np.zeros(0, dtype=np.int64)
    idx_min = int(idx.min()) if idx.size else 0
    payload = pack_bits((idx - idx_min).astype(np.uint64), bits)
    extras = {
        "bits": str(bits),
        "delta": repr(float(delta)),
        "minval": repr(float(idx_min * delta)),
        "stored": str(int(flat.size)),
        "mask": mask_name if mask is not None else "",
    }
    return TensorEntry(name, "grid", values.shape, payload, extras)


def bitmap_entry(name: str, mask: np.ndarray) -> TensorEntry:
    bits = (mask.reshape(-1) > 0).astype(np.uint8)
    payload = np.packbits(bits, bitorder="little").tobytes()
    return TensorEntry(name, "bitmap_mask", mask.shape, payload)


class Checkpoint:
    """Ordered metadata plus named tensor entries."""

    def __init__(self):
        self.metadata: dict[str, str] = {}
        self.entries: dict[str, TensorEntry] = {}

    def add(self, entry: TensorEntry) -> None:
        if entry.name in self.entries:
            raise FormatError(f"duplicate tensor {entry.name!r}")
        self.entries[entry.name] = entry

    def array(self, name: str) -> np.ndarray:
        """Decode one tensor to float64, resolving grid/mask pairing."""
        entry = self.entries.get(name)
        if entry is None:
            raise FormatError(f"checkpoint has no tensor {name!r}")
        if entry.encoding == "raw_f64":
            return np.frombuffer(entry.payload, "<f8").reshape(entry.shape).copy()
        if entry.encoding == "raw_f32":
            return np.frombuffer(entry.payload, "<f4").astype(np.float64).reshape(entry.shape)
        if entry.encoding == "bitmap_mask":
            flat = np.unpackbits(np.frombuffer(entry.payload, np.uint8),
                                 bitorder="little")[:entry.count()]
            return flat.astype(np.float64).reshape(entry.shape)
        stored = int(entry.extras["stored"])
        bits = int(entry.extras["bits"])
        delta = float(entry.extras["delta"])
        minval = float(entry.extras["minval"])
        values = minval + unpack_bits(entry.payload, bits, stored).astype(np.float64) * delta
        mask_name = entry.extras.get("mask", "")
        if not mask_name:
            return values.reshape(entry.shape)
        mask = self.array(mask_name) > 0
        full = np.zeros(entry.count())
        full[mask.reshape(-1)] = values
        return full.reshape(entry.shape)

    # ------------------------------------------------------------------
    # serialization

    def to_bytes(self) -> bytes:
        meta = "".join(f"{k} = {v}\n" for k, v in self.metadata.items()).encode("utf-8")
        index_lines = []
        payload = io.BytesIO()
        for entry in self.entries.values():
            offset = payload.tell()
            payload.write(entry.payload)
            extras = ";".join(f"{k}={v}" for k, v in entry.extras.items())
            shape = ",".join(str(s) for s in entry.shape)
            index_lines.append(
                f"{entry.name}\t{entry.encoding}\t{shape}\t{offset}\t"
                f"{len(entry.payload)}\t{extras}")
        index = ("\n".join(index_lines) + ("\n" if index_lines else "")).encode("utf-8")
        body = payload.getvalue()
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<I", VERSION))
        for blob in (meta, index, body):
            out.write(struct.pack("<Q", len(blob)))
            out.write(blob)
        return out.getvalue()

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if len(raw) < len(MAGIC) + 4 or raw[:len(MAGIC)] != MAGIC:
            raise FormatError("bad magic; not a checkpoint file")
        (version,) = struct.unpack_from("<I", raw, len(MAGIC))
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        pos = len(MAGIC) + 4

        def take(n):
            nonlocal pos
            if pos + n > len(raw):
                raise FormatError("truncated checkpoint")
            chunk = raw[pos:pos + n]
            pos += n
            return chunk

        def take_block():
            (n,) = struct.unpack("<Q", take(8))
            return take(n)

        ckpt = cls()
        meta = take_block().decode("utf-8")
        index = take_block().decode("utf-8")
        body = take_block()
        for line in meta.splitlines():
            if not line:
                continue
            if " = " not in line:
                raise FormatError(f"malformed metadata line: {line!r}")
            key, value = line.split(" = ", 1)
            ckpt.metadata[key] = value
        for line in index.splitlines():
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise FormatError(f"malformed index line: {line!r}")
            name, encoding, shape_csv, offset, length, extras_csv = parts
            offset, length = int(offset), int(length)
            if offset + length > len(body):
                raise FormatError("tensor payload exceeds checkpoint body")
            shape = tuple(int(s) for s in shape_csv.split(",") if s)
            extras = {}
            if extras_csv:
                for item in extras_csv.split(";"):
                    k, v = item.split("=", 1)
                    extras[k] = v
            ckpt.add(TensorEntry(name, encoding, shape,
                                 body[offset:offset + length], extras))
        return ckpt

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


# ---------------------------------------------------------------------------
# model <-> checkpoint


def _config_metadata(cfg: ModelConfig) -> dict[str, str]:
    return {
        "model.src_vocab_size": str(cfg.src_vocab_size),
        "model.tgt_vocab_size": str(cfg.tgt_vocab_size),
        "model.hidden_units": str(cfg.hidden_units),
        "model.enc_layers": str(cfg.enc_layers),
        "model.dec_layers": str(cfg.dec_layers),
        "model.layer_kinds": ",".join(cfg.layer_kinds),
        "model.embed_dim": str(cfg.embed_dim),
        "model.dropout": repr(cfg.dropout),
        "model.alpha": repr(cfg.alpha),
        "model.max_decode_len": str(cfg.max_decode_len),
        "model.tau": repr(cfg.tau),
    }


def config_from_metadata(meta: dict[str, str]) -> ModelConfig:
    try:
        return ModelConfig(
            src_vocab_size=int(meta["model.src_vocab_size"]),
            tgt_vocab_size=int(meta["model.tgt_vocab_size"]),
            hidden_units=int(meta["model.hidden_units"]),
            enc_layers=int(meta["model.enc_layers"]),
            dec_layers=int(meta["model.dec_layers"]),
            layer_kinds=meta["model.layer_kinds"].split(","),
            embed_dim=int(meta["model.embed_dim"]),
            dropout=float(meta["model.dropout"]),
            alpha=float(meta["model.alpha"]),
            max_decode_len=int(meta["model.max_decode_len"]),
            tau=float(meta["model.tau"]),
        )
    except KeyError as exc:
        raise FormatError(f"checkpoint metadata misses {exc}") from exc


def save_model(model: Seq2SeqModel, extra_metadata: dict[str, str] | None = None,
               adam=None) -> Checkpoint:
    """Serialize parameters (and optionally optimizer moments) at full
    precision together with the model configuration."""
    ckpt = Checkpoint()
    ckpt.metadata.update(_config_metadata(model.config))
    if extra_metadata:
        ckpt.metadata.update(extra_metadata)
    for name, param in model.parameters():
        ckpt.add(raw_entry(name, param.data))
    for cell in model.cells():
        if cell.baked_mask is not None:
            ckpt.add(bitmap_entry(f"{cell.name}.cand.hard_mask", cell.baked_mask))
    if adam is not None:
        ckpt.metadata["adam.step"] = str(adam.step)
        for name, _ in model.parameters():
            ckpt.add(raw_entry(f"adam.m.{name}", adam.m[name]))
            ckpt.add(raw_entry(f"adam.v.{name}", adam.v[name]))
    return ckpt


def load_model(ckpt: Checkpoint) -> Seq2SeqModel:
    """Rebuild a model from a checkpoint, including compressed candidate
    weights and baked pruning masks when present."""
    cfg = config_from_metadata(ckpt.metadata)
    model = Seq2SeqModel(cfg, RngStream(0, 0))
    for name, param in model.parameters():
        arr = ckpt.array(name)
        if arr.shape != param.shape:
            raise FormatError(
                f"tensor {name} has shape {arr.shape}, expected {param.shape}")
        param.data = arr
    for cell in model.cells():
        mask_name = f"{cell.name}.cand.hard_mask"
        if mask_name in ckpt.entries:
            cell.baked_mask = ckpt.array(mask_name)
    return model


def load_adam(ckpt: Checkpoint, model: Seq2SeqModel):
    """Recover optimizer moments saved by :func:`save_model`, or None."""
    if "adam.step" not in ckpt.metadata:
        return None
    from .trainer import AdamState

    adam = AdamState()
    adam.step = int(ckpt.metadata["adam.step"])
    for name, _ in model.parameters():
        adam.m[name] = ckpt.array(f"adam.m.{name}")
        adam.v[name] = ckpt.array(f"adam.v.{name}")
    return adam
