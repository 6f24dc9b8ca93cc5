"""
Self-describing binary container shared by dataset files and model checkpoints.

File layout:
    b"DUET" | uint32 format version | uint32 header length | UTF-8 JSON header | payload

The JSON header lists every array (name, shape) in payload order. The payload is
the concatenation of those arrays as little-endian float32. Headers are written
with sorted keys so the same content always produces the same bytes.
"""

import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from src.core.errors import DatasetIOError, FormatVersionMismatch

MAGIC = b"DUET"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sII")
_DTYPE = np.dtype("<f4")


def encode_container(header: Dict, arrays: Dict[str, np.ndarray]) -> bytes:
    """
    Serialize a header and named float arrays into container bytes.

    Args:
        header: JSON-serializable metadata; the 'arrays' key is reserved
        arrays: Ordered mapping of name -> array; cast to little-endian float32

    Returns:
        Container bytes
    """
    if "arrays" in header:
        raise ValueError("Header key 'arrays' is reserved for the payload index")

    index = []
    chunks = []
    for name, array in arrays.items():
        as_f4 = np.ascontiguousarray(np.asarray(array, dtype=_DTYPE))
        index.append({"name": name, "shape": list(as_f4.shape)})
        chunks.append(as_f4.tobytes())

    full_header = dict(header)
    full_header["arrays"] = index
    header_bytes = json.dumps(full_header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    return _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + b"".join(chunks)


def decode_container(blob: bytes, source: str = "<bytes>") -> Tuple[Dict, Dict[str, np.ndarray]]:
    """
    Parse container bytes; never returns partially decoded data.

    Raises:
        FormatVersionMismatch: On a wrong magic/version, a truncated header,
                               or a payload whose size disagrees with the index
    """
    header = _parse_header(blob, source)
    offset = _PREAMBLE.size + header.pop("_header_length")

    expected = sum(int(np.prod(entry["shape"], dtype=np.int64)) for entry in header["arrays"])
    payload = blob[offset:]
    if len(payload) != expected * _DTYPE.itemsize:
        raise FormatVersionMismatch(
            f"{source}: payload has {len(payload)} bytes, header describes "
            f"{expected * _DTYPE.itemsize}"
        )

    arrays: Dict[str, np.ndarray] = {}
    cursor = 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        flat = np.frombuffer(payload, dtype=_DTYPE, count=count, offset=cursor)
        arrays[entry["name"]] = flat.reshape(shape).astype(np.float32)
        cursor += count * _DTYPE.itemsize

    return header, arrays


def _parse_header(blob: bytes, source: str) -> Dict:
    if len(blob) < _PREAMBLE.size:
        raise FormatVersionMismatch(f"{source}: file too short ({len(blob)} bytes)")

    magic, version, header_length = _PREAMBLE.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatVersionMismatch(f"{source}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"{source}: format version {version}, expected {FORMAT_VERSION}"
        )

    end = _PREAMBLE.size + header_length
    if len(blob) < end:
        raise FormatVersionMismatch(f"{source}: header truncated")

    try:
        header = json.loads(blob[_PREAMBLE.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatVersionMismatch(f"{source}: corrupt header ({exc})") from exc
    if not isinstance(header, dict) or "arrays" not in header:
        raise FormatVersionMismatch(f"{source}: header has no array index")

    header["_header_length"] = header_length
    return header


def write_container(path: Path, header: Dict, arrays: Dict[str, np.ndarray]) -> None:
    """
    Write a container file.

    Raises:
        DatasetIOError: If the file cannot be written
    """
    blob = encode_container(header, arrays)
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(blob)
    except OSError as exc:
        raise DatasetIOError(f"Cannot write {path}: {exc}") from exc


def read_container(path: Path) -> Tuple[Dict, Dict[str, np.ndarray]]:
    """
    Read a container file.

    Raises:
        DatasetIOError: If the file cannot be read
        FormatVersionMismatch: If the content is not a valid container
    """
    return decode_container(_read_bytes(path), source=str(path))


def read_header(path: Path) -> Dict:
    """
    Read only the JSON header of a container file (payload is not validated).
    """
    header = _parse_header(_read_bytes(path), source=str(path))
    header.pop("_header_length")
    return header


def _read_bytes(path: Path) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as exc:
        raise DatasetIOError(f"Cannot read {path}: {exc}") from exc
