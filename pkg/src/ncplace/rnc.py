"""Randomized linear network coding over GF(256).

Sources and NC nodes emit random linear combinations; clients keep a
progressively reduced decoding matrix and recover the native packets once it
reaches full rank.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import gf256
from .gf256 import CoeffMatrix, SingularMatrixError

PACKET_SIZE = 512
GENERATION_SIZE = 32


class GenerationMismatch(ValueError):
    pass


@dataclass
class Generation:
    id: int
    native: np.ndarray
    deadline: float = float("inf")

    def __post_init__(self):
        self.native = np.asarray(self.native, dtype=np.uint8)
        if self.native.ndim != 2 or self.native.shape[0] == 0:
            raise ValueError("a generation needs a non-empty (G, payload) array")

    @property
    def size(self) -> int:
        return self.native.shape[0]

    @classmethod
    def random(cls, id: int, G: int = GENERATION_SIZE, packet_size: int = PACKET_SIZE,
               rng: np.random.Generator | None = None, deadline: float = float("inf")) -> "Generation":
        rng = rng if rng is not None else np.random.default_rng(id)
        return cls(id, rng.integers(0, 256, (G, packet_size), dtype=np.uint8), deadline)


@dataclass
class CodedPacket:
    generation_id: int
    coeffs: np.ndarray
    payload: np.ndarray

    def to_bytes(self) -> bytes:
        """Wire layout: 4-byte big-endian generation id, G coefficients, payload."""
        return struct.pack(">I", self.generation_id) + self.coeffs.tobytes() + self.payload.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, G: int) -> "CodedPacket":
        if len(data) < 4 + G:
            raise ValueError(f"record of {len(data)} bytes is shorter than the {4 + G}-byte header")
        (gid,) = struct.unpack(">I", data[:4])
        coeffs = np.frombuffer(data[4 : 4 + G], dtype=np.uint8).copy()
        payload = np.frombuffer(data[4 + G :], dtype=np.uint8).copy()
        return cls(gid, coeffs, payload)

    def __eq__(self, other):
        if not isinstance(other, CodedPacket):
            return NotImplemented
        return (self.generation_id == other.generation_id
                and np.array_equal(self.coeffs, other.coeffs)
                and np.array_equal(self.payload, other.payload))


def encode_source(gen: Generation, rng: np.random.Generator) -> CodedPacket:
    coeffs = rng.integers(0, 256, gen.size, dtype=np.uint8)
    return CodedPacket(gen.id, coeffs, gf256.dot(coeffs, gen.native))


def recombine(buffered: Sequence[CodedPacket], rng: np.random.Generator) -> CodedPacket:
    """Random combination of buffered packets; all-zero draws are redrawn."""
    if not buffered:
        raise ValueError("nothing to recombine")
    gid = buffered[0].generation_id
    if any(p.generation_id != gid for p in buffered):
        raise GenerationMismatch("cannot mix generations in one combination")
    while True:
        f = rng.integers(0, 256, len(buffered), dtype=np.uint8)
        if f.any():
            break
    coeffs = gf256.dot(f, np.stack([p.coeffs for p in buffered]))
    payload = gf256.dot(f, np.stack([p.payload for p in buffered]))
    return CodedPacket(gid, coeffs, payload)


@dataclass
class DecoderState:
    generation_id: int
    size: int
    payload_len: int = PACKET_SIZE
    matrix: CoeffMatrix = field(init=False)

    def __post_init__(self):
        self.matrix = CoeffMatrix(self.size, self.payload_len)

    @property
    def rank(self) -> int:
        return self.matrix.rank

    @property
    def decodable(self) -> bool:
        return self.matrix.rank == self.size

    def _check(self, p: CodedPacket):
        if p.generation_id != self.generation_id:
            raise GenerationMismatch(f"packet of generation {p.generation_id} offered to decoder "
                                     f"of generation {self.generation_id}")

    def is_innovative(self, p: CodedPacket) -> bool:
        self._check(p)
        return not self.matrix.in_span(p.coeffs)

    def ingest(self, p: CodedPacket) -> int:
        self._check(p)
        self.matrix.append(p.coeffs, p.payload)
        return self.matrix.rank

    def decode(self) -> np.ndarray:
        if not self.decodable:
            raise SingularMatrixError(f"rank {self.rank} < generation size {self.size}")
        return self.matrix.solved_payloads()


def is_innovative(state: DecoderState, p: CodedPacket) -> bool:
    return state.is_innovative(p)


def ingest(state: DecoderState, p: CodedPacket) -> int:
    return state.ingest(p)


def decode(state: DecoderState) -> np.ndarray:
    return state.decode()
