"""Hardware-efficient ansatz layout and parameter-vector helpers.

Layout: ``depth`` blocks of (Ry then Rz on every qubit, CZ on the
nearest-neighbour ring), capped by one more rotation block. Parameter
``2 * (layer * n + q)`` is the Ry angle of qubit ``q`` in rotation block
``layer`` and the following index is its Rz angle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def ring_pairs(n_qubits: int) -> tuple[tuple[int, int], ...]:
    """CZ pairs in frozen order: even bonds, odd bonds, then the wrap bond."""
    even = [(i, i + 1) for i in range(0, n_qubits - 1, 2)]
    odd = [(i, i + 1) for i in range(1, n_qubits - 1, 2)]
    wrap = [(n_qubits - 1, 0)] if n_qubits > 2 else []
    return tuple(even + odd + wrap)


@dataclass(frozen=True)
class AnsatzSpec:
    n_qubits: int
    depth: int
    entangler: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        for a, b in self.entangler:
            if a == b or not (0 <= a < self.n_qubits and 0 <= b < self.n_qubits):
                raise ValueError(f"invalid entangler pair ({a}, {b})")

    @property
    def n_rotation_layers(self) -> int:
        return self.depth + 1

    @property
    def parameter_count(self) -> int:
        return 2 * self.n_qubits * self.n_rotation_layers

    def layer_angles(self, theta: np.ndarray, layer: int) -> tuple[np.ndarray, np.ndarray]:
        """``(ry, rz)`` angle arrays of shape ``(..., n_qubits)`` for one rotation block."""
        block = theta[..., 2 * layer * self.n_qubits: 2 * (layer + 1) * self.n_qubits]
        return block[..., 0::2], block[..., 1::2]

    def to_dict(self) -> dict:
        return {"n_qubits": self.n_qubits, "depth": self.depth}


def build_ansatz(n_qubits: int, depth: int) -> AnsatzSpec:
    if n_qubits < 2:
        raise ValueError("the ring ansatz needs at least 2 qubits")
    if depth < 0:
        raise ValueError("depth must be >= 0")
    return AnsatzSpec(n_qubits, depth, ring_pairs(n_qubits) if depth > 0 else ())


def parameter_count(ansatz: AnsatzSpec) -> int:
    return ansatz.parameter_count


def init_params(count: int, scale: float = 1e-3, seed=None) -> np.ndarray:
    """I.i.d. uniform angles in ``[-scale, scale]``."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    return rng.uniform(-scale, scale, size=int(count))


def wrap_angles(theta) -> np.ndarray:
    """Map every angle into ``(-pi, pi]``."""
    theta = np.asarray(theta, dtype=float)
    wrapped = np.pi - np.mod(np.pi - theta, 2 * np.pi)
    return wrapped
