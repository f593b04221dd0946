"""Serialisation of demonstrations for multi-process use and golden files.

Binary layout (all little-endian)::

    header:  b"LTCRDEMO" | u16 version (=1) | u32 record count
    record:  u32 round | u16 teacher_id | u16 action
             | u32 state_len | f64 * state_len
             | u32 K         | f64 * K

Text layout: a ``# ltcr-demo v1`` line, then one record per line,
``round teacher_id action | state... | probs...`` with every float written by
`float.hex`, so both forms round-trip bit-exactly.
"""
from __future__ import annotations

import struct
from typing import Iterable

import numpy as np

from .errors import ContractViolation
from .protocol import Demonstration, FeatureVector

MAGIC = b"LTCRDEMO"
VERSION = 1
_HEAD = struct.Struct("<8sHI")
_REC = struct.Struct("<IHH")
_LEN = struct.Struct("<I")
TEXT_HEADER = "# ltcr-demo v1"


def _check(d: Demonstration) -> None:
    if not (0 <= d.round < 2**32 and 0 <= d.teacher_id < 2**16 and 0 <= d.feature.action < 2**16):
        raise ContractViolation(f"demonstration field out of wire range: {d}")


def encode(demos: Iterable[Demonstration]) -> bytes:
    demos = list(demos)
    parts = [_HEAD.pack(MAGIC, VERSION, len(demos))]
    for d in demos:
        _check(d)
        state = np.ascontiguousarray(d.feature.state, dtype="<f8")
        probs = np.ascontiguousarray(d.dist, dtype="<f8")
        parts += [
            _REC.pack(d.round, d.teacher_id, d.feature.action),
            _LEN.pack(state.size),
            state.tobytes(),
            _LEN.pack(probs.size),
            probs.tobytes(),
        ]
    return b"".join(parts)


def _array(buf: bytes, offset: int) -> tuple[np.ndarray, int]:
    (n,) = _LEN.unpack_from(buf, offset)
    offset += _LEN.size
    if offset + 8 * n > len(buf):
        raise ContractViolation("truncated demonstration payload")
    arr = np.frombuffer(buf, dtype="<f8", count=n, offset=offset).astype(np.float64)
    return arr, offset + 8 * n


def decode(buf: bytes) -> list[Demonstration]:
    if len(buf) < _HEAD.size:
        raise ContractViolation("buffer too short for a demonstration header")
    magic, version, count = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ContractViolation("not a demonstration buffer")
    if version != VERSION:
        raise ContractViolation(f"unsupported demonstration version {version}")
    offset = _HEAD.size
    out = []
    for _ in range(count):
        rnd, teacher, action = _REC.unpack_from(buf, offset)
        offset += _REC.size
        state, offset = _array(buf, offset)
        probs, offset = _array(buf, offset)
        out.append(Demonstration(FeatureVector(state, action), teacher, probs, rnd))
    if offset != len(buf):
        raise ContractViolation("trailing bytes after demonstrations")
    return out


def to_text(demos: Iterable[Demonstration]) -> str:
    lines = [TEXT_HEADER]
    for d in demos:
        _check(d)
        state = " ".join(float(x).hex() for x in d.feature.state)
        probs = " ".join(float(x).hex() for x in d.dist)
        lines.append(f"{d.round} {d.teacher_id} {d.feature.action} | {state} | {probs}")
    return "\n".join(lines) + "\n"


def from_text(text: str) -> list[Demonstration]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != TEXT_HEADER:
        raise ContractViolation("missing demonstration text header")
    out = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            head, state, probs = line.split("|")
            rnd, teacher, action = (int(x) for x in head.split())
            s = np.array([float.fromhex(x) for x in state.split()])
            p = np.array([float.fromhex(x) for x in probs.split()])
        except ValueError as exc:
            raise ContractViolation(f"line {n}: malformed demonstration record") from exc
        out.append(Demonstration(FeatureVector(s, action), teacher, p, rnd))
    return out
