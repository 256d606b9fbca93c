"""Dense float32 kernels for the transformer forward pass.

Matrices are 2-D row-major float32 ndarrays. Every kernel returns a fresh
array and never mutates its inputs, so all operations are safe to call
concurrently. ``matmul`` optionally threads an :class:`OpCounter` that
tallies multiply-accumulate operations; only matmuls are counted, which
keeps the tally reconcilable with the analytic cost model (softmax,
layernorm, GELU and bias adds are deliberately excluded there too).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Matrix = np.ndarray


class ShapeError(ValueError):
    """Operands have incompatible or malformed shapes."""


def matrix(values) -> Matrix:
    """Coerce nested sequences (or an array) to a 2-D row-major float32 matrix."""
    m = np.ascontiguousarray(values, dtype=np.float32)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got {m.ndim} dimension(s)")
    return m


def vector(values) -> np.ndarray:
    """Coerce to a 1-D float32 vector."""
    v = np.ascontiguousarray(values, dtype=np.float32)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got {v.ndim} dimension(s)")
    return v


@dataclass
class OpCounter:
    """Running multiply-accumulate tally for a single forward pass.

    Confine one counter to one pass; it is not synchronized across threads.
    """

    macs: int = 0
    enabled: bool = True

    def add(self, count: int) -> None:
        if self.enabled:
            self.macs += int(count)


def matmul(a: Matrix, b: Matrix, counter: OpCounter | None = None) -> Matrix:
    """Matrix product ``a @ b``; adds ``rows*inner*cols`` MACs to the counter."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
        )
    if counter is not None:
        counter.add(a.shape[0] * a.shape[1] * b.shape[1])
    return np.matmul(a, b)


def softmax_rows(m: Matrix) -> Matrix:
    """Row-wise softmax with per-row max subtraction for numerical stability."""
    m = np.asarray(m, dtype=np.float32)
    if m.ndim != 2:
        raise ShapeError("softmax_rows expects a 2-D operand")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def layernorm(m: Matrix, gamma, beta, eps: float = 1e-6) -> Matrix:
    """Per-row standardization (population variance) followed by an affine map."""
    m = np.asarray(m, dtype=np.float32)
    gamma = vector(gamma)
    beta = vector(beta)
    if m.ndim != 2:
        raise ShapeError("layernorm expects a 2-D operand")
    if gamma.shape[0] != m.shape[1] or beta.shape[0] != m.shape[1]:
        raise ShapeError(
            f"layernorm affine parameters must have length {m.shape[1]}, "
            f"got gamma={gamma.shape[0]} beta={beta.shape[0]}"
        )
    mean = m.mean(axis=1, keepdims=True)
    var = m.var(axis=1, keepdims=True)
    normed = (m - mean) / np.sqrt(var + np.float32(eps))
    return normed * gamma + beta


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(m: Matrix) -> Matrix:
    """Elementwise tanh-approximation GELU."""
    m = np.asarray(m, dtype=np.float32)
    inner = np.float32(_GELU_C) * (m + np.float32(0.044715) * m * m * m)
    return np.float32(0.5) * m * (np.float32(1.0) + np.tanh(inner))
