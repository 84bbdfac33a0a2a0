"""Binary embedding store.

Layout (all little-endian)::

    b"TFES" | version u32 | modality u8 | dim u32 | count u64
    count x ( id_len u16 | protein_id utf-8 | position u32 | wt u8 | mut u8 | dim x f32 )

Modality tags: 1 sequence, 2 structure, 3 dynamics, 4 sequence context
vectors (h_i, keyed with wt == mut == site residue), 5 token table (20 rows
keyed ``("", index, aa, aa)``).
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .core_data import AMINO_ACIDS

MAGIC = b"TFES"
VERSION = 1
HEADER = struct.Struct("<4sIBIQ")
RECORD_HEAD = struct.Struct("<IBB")

SEQ, STR, DYN, CONTEXT, TOKENS = 1, 2, 3, 4, 5
MODALITY_NAMES = {SEQ: "seq", STR: "str", DYN: "dyn", CONTEXT: "context", TOKENS: "tokens"}

Key = tuple[str, int, str, str]


class StoreError(ValueError):
    pass


class NotAStoreError(StoreError):
    pass


class StoreVersionError(StoreError):
    pass


class TruncatedStoreError(StoreError):
    pass


class DuplicateKeyError(StoreError):
    pass


def record_size(protein_id: str, dim: int) -> int:
    return 2 + len(protein_id.encode("utf-8")) + RECORD_HEAD.size + 4 * dim


def encode_store(modality: int, entries: Iterable[tuple[Key, np.ndarray]], dim: int | None = None) -> bytes:
    entries = list(entries)
    if modality not in MODALITY_NAMES:
        raise StoreError(f"unknown modality tag {modality}")
    if dim is None:
        if not entries:
            raise StoreError("dim required for an empty store")
        dim = int(np.asarray(entries[0][1]).shape[-1])
    seen = set()
    parts = [HEADER.pack(MAGIC, VERSION, modality, dim, len(entries))]
    for key, vec in entries:
        pid, pos, wt, mut = key
        if key in seen:
            raise DuplicateKeyError(f"duplicate key {key}")
        seen.add(key)
        vec = np.asarray(vec)
        if vec.shape != (dim,):
            raise StoreError(f"vector for {key} has shape {vec.shape}, expected ({dim},)")
        raw_id = pid.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_id)))
        parts.append(raw_id)
        parts.append(RECORD_HEAD.pack(pos, ord(wt), ord(mut)))
        parts.append(vec.astype("<f4").tobytes())
    return b"".join(parts)


def decode_store(data: bytes) -> tuple[int, int, dict[Key, np.ndarray]]:
    """Return ``(modality, dim, entries)``; entries keep file order."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise NotAStoreError("not an embedding store")
    if len(data) < HEADER.size:
        raise TruncatedStoreError("truncated header")
    _, version, modality, dim, count = HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise StoreVersionError(f"unsupported store version {version}")
    off = HEADER.size
    entries: dict[Key, np.ndarray] = {}
    payload = 4 * dim
    for _ in range(count):
        if off + 2 > len(data):
            raise TruncatedStoreError("truncated record")
        (n,) = struct.unpack_from("<H", data, off)
        off += 2
        end = off + n + RECORD_HEAD.size + payload
        if end > len(data):
            raise TruncatedStoreError("truncated record")
        pid = data[off : off + n].decode("utf-8")
        off += n
        pos, wt, mut = RECORD_HEAD.unpack_from(data, off)
        off += RECORD_HEAD.size
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off).astype(np.float32)
        off += payload
        key = (pid, pos, chr(wt), chr(mut))
        if key in entries:
            raise DuplicateKeyError(f"duplicate key {key}")
        entries[key] = vec
    if off != len(data):
        raise StoreError(f"{len(data) - off} trailing bytes after {count} records")
    return modality, dim, entries


def store_write(path: Union[str, Path], modality: int, entries, dim: int | None = None) -> None:
    Path(path).write_bytes(encode_store(modality, entries, dim))


def store_read(path: Union[str, Path]) -> tuple[int, int, dict[Key, np.ndarray]]:
    return decode_store(Path(path).read_bytes())


def token_table_entries(table: np.ndarray) -> list[tuple[Key, np.ndarray]]:
    return [(("", i + 1, aa, aa), table[i]) for i, aa in enumerate(AMINO_ACIDS)]


def token_table_from_entries(entries: dict[Key, np.ndarray]) -> np.ndarray:
    rows = {key[2]: vec for key, vec in entries.items()}
    missing = [aa for aa in AMINO_ACIDS if aa not in rows]
    if missing:
        raise StoreError(f"token table lacks residues {''.join(missing)}")
    return np.stack([rows[aa] for aa in AMINO_ACIDS]).astype(np.float64)
