"""Parameterized angle-encoding circuits (the large and compact embeddings).

A map is a sequence of blocks. Each block holds ``rotation_layers`` layers of
single-qubit rotations (one data component per gate, axes alternating
RX/RZ across the whole circuit) followed by ``entangling_layers`` layers of
nearest-neighbour CNOTs. Data component ``l`` always lives in rotation slot
``l`` where ``slot = layer * n_qubits + qubit``.

Tunable angles are injected into a list of slots either additively (the
gate angle becomes ``x[slot] + theta[i]``) or as a dedicated gate of the same
axis placed right after the data gate.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .qstate import Circuit, GateKind, GateOp

FORMAT = "qadv.featuremap"
FORMAT_VERSION = 1

ADDITIVE = "additive"
DEDICATED = "dedicated"
BRICK = "brick"
RING = "ring"


class DimensionError(ValueError):
    def __init__(self, what: str, expected: int, actual: int):
        super().__init__(f"{what}: expected length {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


@dataclass(frozen=True)
class Block:
    rotation_layers: int
    entangling_layers: int = 2

    def __post_init__(self):
        if self.rotation_layers < 1:
            raise ValueError("a block needs at least one rotation layer")
        if self.entangling_layers < 0:
            raise ValueError("entangling_layers must be >= 0")


@dataclass(frozen=True)
class _Template:
    kinds: np.ndarray
    targets: np.ndarray
    controls: np.ndarray
    data_idx: np.ndarray   # per op, data component feeding the angle or -1
    param_idx: np.ndarray  # per op, tunable angle feeding the gate or -1
    data_op: np.ndarray    # per data component, index of its op


@dataclass(frozen=True)
class FeatureMapSpec:
    n_qubits: int
    blocks: tuple[Block, ...]
    param_slots: tuple[int, ...]
    injection: str = ADDITIVE
    first_axis: str = "RX"
    entangler: str = BRICK
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(Block(*b) if not isinstance(b, Block) else b
                                                 for b in self.blocks))
        object.__setattr__(self, "param_slots", tuple(int(s) for s in self.param_slots))
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        if not self.blocks:
            raise ValueError("at least one block is required")
        if self.injection not in (ADDITIVE, DEDICATED):
            raise ValueError(f"unknown injection mode {self.injection!r}")
        if self.first_axis not in ("RX", "RZ"):
            raise ValueError("first_axis must be RX or RZ")
        if self.entangler not in (BRICK, RING):
            raise ValueError(f"unknown entangler {self.entangler!r}")
        if len(set(self.param_slots)) != len(self.param_slots):
            raise ValueError("param_slots must be unique")
        if any(not 0 <= s < self.data_dim for s in self.param_slots):
            raise ValueError("param slot out of range")

    @property
    def n_rotation_layers(self) -> int:
        return sum(b.rotation_layers for b in self.blocks)

    @property
    def data_dim(self) -> int:
        return self.n_rotation_layers * self.n_qubits

    @property
    def param_dim(self) -> int:
        return len(self.param_slots)

    @property
    def n_rotation_gates(self) -> int:
        extra = self.param_dim if self.injection == DEDICATED else 0
        return self.data_dim + extra

    def _entangling_pairs(self, layer: int) -> list[tuple[int, int]]:
        n = self.n_qubits
        if self.entangler == RING:
            if n == 1:
                return []
            if n == 2:
                return [(0, 1)] if layer % 2 == 0 else [(1, 0)]
            return [(q, (q + 1) % n) for q in range(n)]
        start = layer % 2
        return [(q, q + 1) for q in range(start, n - 1, 2)]

    @cached_property
    def template(self) -> _Template:
        n = self.n_qubits
        slot_param = {s: i for i, s in enumerate(self.param_slots)}
        axes = (GateKind.RX, GateKind.RZ) if self.first_axis == "RX" else (GateKind.RZ, GateKind.RX)
        kinds, targets, controls, data_idx, param_idx = [], [], [], [], []

        def emit(kind, target, control=-1, d=-1, p=-1):
            kinds.append(int(kind))
            targets.append(target)
            controls.append(control)
            data_idx.append(d)
            param_idx.append(p)

        layer = 0
        for block in self.blocks:
            for _ in range(block.rotation_layers):
                axis = axes[layer % 2]
                for q in range(n):
                    slot = layer * n + q
                    p = slot_param.get(slot, -1)
                    if self.injection == ADDITIVE:
                        emit(axis, q, d=slot, p=p)
                    else:
                        emit(axis, q, d=slot)
                        if p >= 0:
                            emit(axis, q, p=p)
                layer += 1
            for e in range(block.entangling_layers):
                for c, t in self._entangling_pairs(e):
                    emit(GateKind.CNOT, t, control=c)
        data_idx_arr = np.array(data_idx, dtype=np.intp)
        data_op = np.empty(self.data_dim, dtype=np.intp)
        data_op[data_idx_arr[data_idx_arr >= 0]] = np.flatnonzero(data_idx_arr >= 0)
        return _Template(
            kinds=np.array(kinds, dtype=np.int8),
            targets=np.array(targets, dtype=np.intc),
            controls=np.array(controls, dtype=np.intc),
            data_idx=data_idx_arr,
            param_idx=np.array(param_idx, dtype=np.intp),
            data_op=data_op,
        )

    def gate_counts(self) -> dict[str, int]:
        kinds = self.template.kinds
        return {k.name: int(np.sum(kinds == k)) for k in GateKind}

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "name": self.name,
            "n_qubits": self.n_qubits,
            "blocks": [[b.rotation_layers, b.entangling_layers] for b in self.blocks],
            "data_dim": self.data_dim,
            "param_dim": self.param_dim,
            "injection": self.injection,
            "param_slots": list(self.param_slots),
            "first_axis": self.first_axis,
            "entangler": self.entangler,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureMapSpec":
        if doc.get("format") != FORMAT or doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"not a {FORMAT} v{FORMAT_VERSION} document")
        spec = cls(
            n_qubits=int(doc["n_qubits"]),
            blocks=tuple(Block(int(r), int(e)) for r, e in doc["blocks"]),
            param_slots=tuple(doc["param_slots"]),
            injection=doc["injection"],
            first_axis=doc["first_axis"],
            entangler=doc["entangler"],
            name=doc.get("name", "custom"),
        )
        if spec.data_dim != doc["data_dim"] or spec.param_dim != doc["param_dim"]:
            raise ValueError("stored dimensions disagree with the block structure")
        return spec

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FeatureMapSpec":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def large_map() -> FeatureMapSpec:
    """10 qubits, blocks of 8/12/6 rotation layers, 30 angles added to slots 0..29."""
    return FeatureMapSpec(
        n_qubits=10,
        blocks=(Block(8), Block(12), Block(6)),
        param_slots=tuple(range(30)),
        injection=ADDITIVE,
        name="large",
    )


def compact_map(n_qubits: int = 10, n_blocks: int = 4, layers_per_block: int = 2,
                n_param_layers: int = 2) -> FeatureMapSpec:
    """Compact embedding: dedicated tunable gates on the first ``n_param_layers`` layers.

    The defaults give 80 data gates and 20 tunable gates on 10 qubits; smaller
    arguments build the same pattern at desk scale.
    """
    n_layers = n_blocks * layers_per_block
    if not 0 <= n_param_layers <= n_layers:
        raise ValueError("n_param_layers exceeds the number of rotation layers")
    return FeatureMapSpec(
        n_qubits=n_qubits,
        blocks=tuple(Block(layers_per_block) for _ in range(n_blocks)),
        param_slots=tuple(range(n_param_layers * n_qubits)),
        injection=DEDICATED,
        name="compact" if (n_qubits, n_blocks, layers_per_block) == (10, 4, 2)
        else f"compact-{n_qubits}q{n_blocks}b",
    )


def check_vector(spec: FeatureMapSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != spec.data_dim:
        raise DimensionError("input vector", spec.data_dim, x.size if x.ndim == 1 else -1)
    return x


def check_params(spec: FeatureMapSpec, theta) -> np.ndarray:
    theta = np.asarray(theta if theta is not None else np.zeros(spec.param_dim), dtype=float)
    if theta.ndim != 1 or theta.shape[0] != spec.param_dim:
        raise DimensionError("parameter vector", spec.param_dim, theta.size)
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameter vector has non-finite entries")
    return theta


def angle_matrix(spec: FeatureMapSpec, X, theta) -> np.ndarray:
    """Gate angles for every row of ``X``: shape (M, n_ops); CNOT columns are 0."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != spec.data_dim:
        raise DimensionError("input vector", spec.data_dim, X.shape[1])
    theta = check_params(spec, theta)
    tpl = spec.template
    d_mask = tpl.data_idx >= 0
    p_mask = tpl.param_idx >= 0
    angles = np.zeros((X.shape[0], tpl.kinds.shape[0]))
    angles[:, d_mask] = X[:, tpl.data_idx[d_mask]]
    angles[:, p_mask] += theta[tpl.param_idx[p_mask]]
    return angles


def bind(spec: FeatureMapSpec, x, theta=None) -> Circuit:
    x = check_vector(spec, x)
    angles = angle_matrix(spec, x[None, :], theta)[0]
    tpl = spec.template
    ops = []
    for k, kind in enumerate(tpl.kinds):
        if kind == GateKind.CNOT:
            ops.append(GateOp(GateKind.CNOT, int(tpl.targets[k]), control=int(tpl.controls[k])))
        else:
            ops.append(GateOp(GateKind(int(kind)), int(tpl.targets[k]), angle=float(angles[k])))
    return Circuit(spec.n_qubits, tuple(ops))
