"""Arithmetic over GF(2^8) and dense linear algebra on coefficient matrices.

The field is built on the polynomial x^8 + x^4 + x^3 + x + 1 (0x11B).
Multiplication goes through log/antilog tables generated from the
shift-and-xor product, so every table entry is derived from the slow
reference and can be checked against it exhaustively.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

POLY = 0x11B
GENERATOR = 0x03


def slow_mul(a: int, b: int) -> int:
    """Carry-less product of ``a`` and ``b`` reduced modulo 0x11B."""
    result = 0
    while b:
        if b & 1:
            result ^= a
        a <<= 1
        if a & 0x100:
            a ^= POLY
        b >>= 1
    return result


def _build_tables() -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    exp = np.zeros(510, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int32)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x = slow_mul(x, GENERATOR)
    exp[255:] = exp[:255]

    a = np.arange(256)
    la = log[a]
    mul = exp[la[:, None] + la[None, :]]
    mul[0, :] = 0
    mul[:, 0] = 0

    inv = np.zeros(256, dtype=np.uint8)
    inv[1:] = exp[255 - log[1:]]
    return exp, log, np.ascontiguousarray(mul, dtype=np.uint8), inv


EXP, LOG, MUL, INV = _build_tables()


class SingularMatrixError(ValueError):
    """Raised when a system does not have full column rank."""


def gf_add(a: int, b: int) -> int:
    return a ^ b


def gf_mul(a: int, b: int) -> int:
    return int(MUL[a, b])


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no multiplicative inverse in GF(256)")
    return int(INV[a])


def gf_div(a: int, b: int) -> int:
    return gf_mul(a, gf_inv(b))


def scale(vec: np.ndarray, a: int) -> np.ndarray:
    """Multiply every byte of ``vec`` by the field element ``a``."""
    return MUL[a][vec]


def dot(coeffs: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Linear combination ``sum_i coeffs[i] * rows[i]`` over GF(256)."""
    rows = np.asarray(rows, dtype=np.uint8)
    coeffs = np.asarray(coeffs, dtype=np.uint8)
    if len(coeffs) == 0:
        return np.zeros(rows.shape[1:], dtype=np.uint8)
    return np.bitwise_xor.reduce(MUL[coeffs[:, None], rows], axis=0)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint8)
    return np.stack([dot(row, b) for row in a]) if len(a) else np.zeros((0,) + b.shape[1:], np.uint8)


def _as_matrix(rows: Iterable[Sequence[int]] | np.ndarray) -> np.ndarray:
    m = np.array(rows, dtype=np.uint8)
    if m.ndim == 1:
        m = m.reshape(1, -1) if m.size else m.reshape(0, 0)
    return m


class CoeffMatrix:
    """Coefficient rows kept in reduced row echelon form as they arrive.

    ``basis[:rank]`` holds the reduced rows; ``pivots[i]`` is the column of
    the leading 1 of row ``i``.  An optional payload block of ``payload_len``
    bytes per row is carried through the same row operations.
    """

    def __init__(self, width: int, payload_len: int = 0):
        from . import kernels

        self._k = kernels
        self.width = width
        self.payload_len = payload_len
        self.basis = np.zeros((width, width), dtype=np.uint8)
        self.pbasis = np.zeros((width, payload_len), dtype=np.uint8)
        self.pivots = np.full(width, -1, dtype=np.int64)
        self.rank = 0
        self.rows: list[np.ndarray] = []

    def in_span(self, vec: np.ndarray) -> bool:
        return self._k.in_span(self.basis, self.pivots, self.rank, np.asarray(vec, np.uint8))

    def append(self, vec: np.ndarray, payload: np.ndarray | None = None) -> bool:
        """Insert a row; return True when it raised the rank."""
        v = np.array(vec, dtype=np.uint8)
        if v.shape != (self.width,):
            raise ValueError(f"row length {v.shape} != {self.width}")
        if self.payload_len:
            p = np.array(payload, dtype=np.uint8)
        else:
            p = np.zeros(0, dtype=np.uint8)
        self.rows.append(v.copy())
        new_rank = self._k.insert_row(self.basis, self.pivots, self.rank, v, self.pbasis, p)
        grew = new_rank > self.rank
        self.rank = new_rank
        return grew

    def recompute_rank(self) -> int:
        return rank(self.rows) if self.rows else 0

    def solved_payloads(self) -> np.ndarray:
        """Payload rows ordered by pivot column; only valid at full rank."""
        if self.rank < self.width:
            raise SingularMatrixError(f"rank {self.rank} < {self.width}")
        order = np.argsort(self.pivots[: self.rank])
        return self.pbasis[order].copy()


def rank(rows: Iterable[Sequence[int]] | np.ndarray) -> int:
    m = _as_matrix(rows)
    if m.size == 0:
        return 0
    cm = CoeffMatrix(m.shape[1])
    for row in m:
        cm.append(row)
        if cm.rank == cm.width:
            break
    return cm.rank


def solve(F: Iterable[Sequence[int]] | np.ndarray, c: np.ndarray) -> np.ndarray:
    """Return ``n`` with ``c = F . n`` applied byte-wise to payload rows."""
    F = _as_matrix(F)
    c = np.asarray(c, dtype=np.uint8)
    if c.ndim == 1:
        c = c.reshape(-1, 1)
    if len(F) != len(c):
        raise ValueError("F and c must have the same number of rows")
    cm = CoeffMatrix(F.shape[1], payload_len=c.shape[1])
    for row, payload in zip(F, c):
        cm.append(row, payload)
    if cm.rank < cm.width:
        raise SingularMatrixError(f"coefficient matrix has rank {cm.rank} < {cm.width}")
    return cm.solved_payloads()
