"""Quantum-kernel SVMs, evasion attacks and adversarial training on a statevector simulator."""
__version__ = "0.1.0"

from ._backend import BACKEND
from .adversary import (AdversarialResult, AltAttackConfig, AttackConfig, EtaMode, attack,
                        attack_alt, augment)
from .alignment import AlignmentConfig, AlignmentTrace, LossKind, align, target_alignment
from .featuremap import FeatureMapSpec, bind, compact_map, large_map
from .pipeline import Dataset, Preprocessor, load_csv, load_images, synth_dataset
from .qkernel import (GradientMode, KernelMatrix, ShotConfig, cross_kernel, decision_gradient,
                      gram_matrix, kernel_value, qke_sample)
from .qstate import Circuit, GateOp, StateVector, run_circuit
from .svm import SvmModel, fit, kfold_select_C, solve_dual

__all__ = [
    "BACKEND", "AdversarialResult", "AltAttackConfig", "AttackConfig", "EtaMode", "attack",
    "attack_alt", "augment", "AlignmentConfig", "AlignmentTrace", "LossKind", "align",
    "target_alignment", "FeatureMapSpec", "bind", "compact_map", "large_map", "Dataset",
    "Preprocessor", "load_csv", "load_images", "synth_dataset", "GradientMode", "KernelMatrix",
    "ShotConfig", "cross_kernel", "decision_gradient", "gram_matrix", "kernel_value", "qke_sample",
    "Circuit", "GateOp", "StateVector", "run_circuit", "SvmModel", "fit", "kfold_select_C",
    "solve_dual",
]
