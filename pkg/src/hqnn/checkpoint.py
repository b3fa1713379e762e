"""Checkpoint container.

Layout: a UTF-8 manifest of ``key=value`` lines terminated by ``end``,
followed by the concatenated tensor payloads (row-major, little-endian
float64, in manifest order)::

    hqnn-checkpoint
    format_version=1
    variant=HQNN_PARALLEL
    option.qubits=5
    ...
    tensor=conv1.weight kind=param shape=16,1,5,5
    ...
    end
    <payload bytes>
"""
from __future__ import annotations

import json
import os
from typing import Optional, Union

import numpy as np

from .errors import ConfigurationError, FormatError
from .nn.models import Model, Variant, build_model

MAGIC = "hqnn-checkpoint"
FORMAT_VERSION = 1
_END = "end"

PathLike = Union[str, os.PathLike]


def _manifest(model: Model, extra: Optional[dict] = None) -> list[str]:
    lines = [MAGIC, f"format_version={FORMAT_VERSION}", f"variant={model.variant.value}"]
    for key, value in sorted(model.spec.options.items()):
        lines.append(f"option.{key}={json.dumps(value)}")
    for name, layer in model.layers:
        spec = getattr(layer, "spec", None)
        if spec is not None:
            for key, value in spec.describe().items():
                lines.append(f"circuit.{name}.{key}={value}")
    for key, value in sorted((extra or {}).items()):
        lines.append(f"meta.{key}={value}")
    params = model.parameters()
    for name, arr in model.state().items():
        kind = "param" if name in params else "buffer"
        lines.append(f"tensor={name} kind={kind} shape={','.join(str(s) for s in arr.shape)}")
    lines.append(_END)
    return lines


def save_checkpoint(model: Model, path: PathLike, extra: Optional[dict] = None) -> None:
    header = ("\n".join(_manifest(model, extra)) + "\n").encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in model.state().values())
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)


def read_manifest(path: PathLike) -> tuple[dict, list[tuple[str, str, tuple[int, ...]]], bytes]:
    with open(path, "rb") as fh:
        raw = fh.read()
    marker = f"\n{_END}\n".encode()
    cut = raw.find(marker)
    if not raw.startswith(MAGIC.encode()) or cut < 0:
        raise FormatError(f"{path}: not a checkpoint (missing header or '{_END}' marker)")
    lines = raw[:cut].decode("utf-8").split("\n")[1:]
    payload = raw[cut + len(marker):]
    meta: dict[str, str] = {}
    tensors = []
    for line in lines:
        if line.startswith("tensor="):
            fields = dict(tok.split("=", 1) for tok in line.split(" "))
            shape = tuple(int(s) for s in fields["shape"].split(",") if s)
            tensors.append((fields["tensor"], fields["kind"], shape))
        elif "=" in line:
            key, value = line.split("=", 1)
            meta[key] = value
        else:
            raise FormatError(f"{path}: malformed manifest line {line!r}")
    return meta, tensors, payload


def load_checkpoint(path: PathLike, expected_variant=None) -> Model:
    """Rebuild the model described by the manifest and fill in every tensor bit-exactly."""
    meta, tensors, payload = read_manifest(path)
    version = meta.get("format_version")
    if version != str(FORMAT_VERSION):
        raise FormatError(f"{path}: format version {version} is not supported (expected {FORMAT_VERSION})")
    try:
        variant = Variant(meta["variant"])
    except (KeyError, ValueError):
        raise FormatError(f"{path}: unknown architecture {meta.get('variant')!r}") from None
    if expected_variant is not None and Variant(expected_variant) is not variant:
        raise ConfigurationError(f"{path}: holds {variant.value}, expected {Variant(expected_variant).value}")
    options = {k[len("option."):]: json.loads(v) for k, v in meta.items() if k.startswith("option.")}
    model = build_model(variant, options)

    expected = sum(int(np.prod(shape)) for _, _, shape in tensors) * 8
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, manifest declares {expected}")
    state = model.state()
    if [name for name, _, _ in tensors] != list(state):
        raise ConfigurationError(f"{path}: tensor names do not match the {variant.value} architecture")
    offset = 0
    for name, _, shape in tensors:
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape)
        model.set_array(name, arr.astype(np.float64))
        offset += count * 8
    return model
