"""Variance-penalized VQE for targeting many-body scar eigenstates."""

__version__ = "0.1.0"

MODULES = ("pauli", "circuit", "ansatz", "models", "diagnostics", "estimator", "evaluators",
           "optimizers", "config", "experiments", "cli")


def module_versions() -> dict[str, str]:
    return {name: __version__ for name in MODULES}
