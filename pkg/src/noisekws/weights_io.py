"""Self-describing weight files.

Layout: magic "NKWS", u32 LE format version, u32 LE header length, a
UTF-8 JSON header (architecture, tensor manifest with byte offsets, and
an optional provenance record), the raw float32 LE tensor data, and a
trailing CRC32 over everything before it. Saving the result of a load
reproduces the input byte for byte.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumMismatch, CorruptHeader, FormatVersionMismatch, IoError
from .nn import ArchSpec, ConvBlockParams, ConvBlockSpec, ModelParams

MAGIC = b"NKWS"
FORMAT_VERSION = 1


def _arch_to_json(arch: ArchSpec) -> dict:
    return {
        "conv_blocks": [
            {
                "out_channels": b.out_channels,
                "kernel_h": b.kernel_h,
                "kernel_w": b.kernel_w,
                "stride": b.stride,
                "activation": b.activation,
            }
            for b in arch.conv_blocks
        ],
        "n_classes": arch.n_classes,
    }


def _arch_from_json(obj: dict) -> ArchSpec:
    try:
        blocks = tuple(ConvBlockSpec(**blk) for blk in obj["conv_blocks"])
        return ArchSpec(blocks, int(obj["n_classes"]))
    except (KeyError, TypeError) as exc:
        raise FormatVersionMismatch(f"unreadable architecture record: {exc}") from exc


def save_weights(params: ModelParams, arch: ArchSpec, path, provenance: dict | None = None) -> None:
    manifest = []
    chunks = []
    offset = 0
    for name, tensor in params.named_tensors():
        raw = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
        manifest.append({"name": name, "dims": list(tensor.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {"arch": _arch_to_json(arch), "tensors": manifest}
    if provenance is not None:
        header["provenance"] = provenance
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(header_bytes)) + header_bytes
    body += b"".join(chunks)
    body += struct.pack("<I", zlib.crc32(body))
    try:
        Path(path).write_bytes(body)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_weight_file(path) -> tuple[ModelParams, ArchSpec, dict | None]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CorruptHeader(f"{path} is not a weight file")
    if zlib.crc32(blob[:-4]) != struct.unpack("<I", blob[-4:])[0]:
        raise ChecksumMismatch(f"{path} failed its integrity check")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"format version {version}, expected {FORMAT_VERSION}")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeader(f"unreadable header in {path}: {exc}") from exc
    arch = _arch_from_json(header["arch"])
    data = blob[12 + header_len : -4]
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        dims = tuple(int(d) for d in entry["dims"])
        count = int(np.prod(dims)) if dims else 1
        start = int(entry["offset"])
        end = start + 4 * count
        if end > len(data):
            raise FormatVersionMismatch(f"tensor {entry['name']} overruns the data section")
        tensors[entry["name"]] = (
            np.frombuffer(data[start:end], dtype="<f4").reshape(dims).copy()
        )
    params = _assemble_params(tensors, arch)
    return params, arch, header.get("provenance")


def load_weights(path) -> tuple[ModelParams, ArchSpec]:
    params, arch, _ = load_weight_file(path)
    return params, arch


def _assemble_params(tensors: dict[str, np.ndarray], arch: ArchSpec) -> ModelParams:
    def take(name, shape):
        if name not in tensors:
            raise FormatVersionMismatch(f"missing tensor {name}")
        t = tensors[name]
        if t.shape != shape:
            raise FormatVersionMismatch(
                f"tensor {name} has shape {t.shape}, architecture implies {shape}"
            )
        return t

    blocks = []
    cin = 1
    for i, spec in enumerate(arch.conv_blocks):
        cout = spec.out_channels
        blocks.append(ConvBlockParams(
            take(f"conv{i}.weight", (cout, cin, spec.kernel_h, spec.kernel_w)),
            take(f"conv{i}.bias", (cout,)),
            take(f"bn{i}.gamma", (cout,)),
            take(f"bn{i}.beta", (cout,)),
            take(f"bn{i}.running_mean", (cout,)),
            take(f"bn{i}.running_var", (cout,)),
        ))
        cin = cout
    fc_weight = take("fc.weight", (arch.n_classes, cin))
    fc_bias = take("fc.bias", (arch.n_classes,))
    return ModelParams(blocks, fc_weight, fc_bias)


def file_checksum(path) -> str:
    """Hex CRC32 of a whole file, used to stamp adapted-model provenance."""
    return format(zlib.crc32(Path(path).read_bytes()), "08x")
