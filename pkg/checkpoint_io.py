"""
Formato binario de checkpoints GQTN compartido por todo el repositorio

    magic "GQTN" | u32 versión | u32 longitud del manifiesto | manifiesto JSON | payloads

Los payloads son arreglos little-endian en el orden del manifiesto.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from errors import DataError

MAGIC = b"GQTN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sII")


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def encode_checkpoint(tensors: Dict[str, np.ndarray], metadata: Dict) -> bytes:
    """Serializar tensores con nombre y metadatos a bytes"""
    entries = []
    payloads = []
    offset = 0
    for name, array in tensors.items():
        little = np.ascontiguousarray(array, dtype=np.dtype(array.dtype).newbyteorder("<"))
        raw = little.tobytes()
        entries.append({
            "name": name, "shape": list(little.shape), "dtype": little.dtype.str,
            "offset": offset, "nbytes": len(raw),
        })
        payloads.append(raw)
        offset += len(raw)
    manifest = _dumps({
        "format_version": FORMAT_VERSION,
        "tensors": entries,
        "payload_bytes": offset,
        "metadata": metadata,
    })
    return _HEADER.pack(MAGIC, FORMAT_VERSION, len(manifest)) + manifest + b"".join(payloads)


def decode_checkpoint(blob: bytes, source: str = "<memory>") -> Tuple[Dict[str, np.ndarray], Dict]:
    """Validar magic, versión, longitud total y la tabla de offsets; devolver (tensores, metadatos)"""
    if len(blob) < _HEADER.size:
        raise DataError(f"Checkpoint truncado: {source}")
    magic, version, manifest_len = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise DataError(f"Magic inválido en {source}: {magic!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"Versión de checkpoint no soportada en {source}: {version}")
    start = _HEADER.size + manifest_len
    try:
        manifest = json.loads(blob[_HEADER.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"Manifiesto ilegible en {source}: {e}")
    try:
        payload_bytes = int(manifest["payload_bytes"])
        entries = list(manifest["tensors"])
        metadata = manifest["metadata"]
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"Manifiesto incompleto en {source}: {e}")
    if len(blob) != start + payload_bytes:
        raise DataError(f"Longitud inesperada en {source}: {len(blob)} bytes, "
                        f"esperados {start + payload_bytes}")

    tensors = {}
    expected = 0
    for entry in entries:
        try:
            name = entry["name"]
            offset, nbytes = int(entry["offset"]), int(entry["nbytes"])
            dtype = np.dtype(entry["dtype"])
            shape = tuple(int(d) for d in entry["shape"])
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"Entrada de tensor inválida en {source}: {e}")
        if offset != expected or nbytes < 0 or offset + nbytes > payload_bytes:
            raise DataError(f"Tensor {name} fuera del payload en {source}: offset={offset}, nbytes={nbytes}")
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dtype.itemsize:
            raise DataError(f"Tensor {name} con nbytes={nbytes} incompatible con shape={list(shape)} en {source}")
        begin = start + offset
        array = np.frombuffer(blob[begin:begin + nbytes], dtype=dtype).reshape(shape)
        tensors[name] = array.astype(array.dtype.newbyteorder("="), copy=True)
        expected += nbytes
    if expected != payload_bytes:
        raise DataError(f"Payload con {payload_bytes - expected} bytes sin tensor en {source}")
    return tensors, metadata


def save_checkpoint(path, tensors: Dict[str, np.ndarray], metadata: Dict) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_checkpoint(tensors, metadata))
    except OSError as e:
        raise DataError(f"No se pudo escribir el checkpoint {path}: {e}")
    logging.info(f"Checkpoint guardado en: {path}")
    return path


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], Dict]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise DataError(f"No se pudo leer el checkpoint {path}: {e}")
    tensors, metadata = decode_checkpoint(blob, str(path))
    logging.info(f"Checkpoint cargado desde: {path} ({len(tensors)} tensores)")
    return tensors, metadata
