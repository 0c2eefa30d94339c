"""Multi-prototype multimodal classification over frozen embeddings.

Each class is represented by several visual prototypes (per-class k-means
centroids of precomputed image features) plus its prompt embeddings as
textual prototypes. Three cosine/softmax heads score a query against the
banks and a weighted ensemble fuses them; the banks themselves are the only
trainable parameters.

Submodules import lazily so the CLI can pin BLAS thread counts before
numpy loads; ``from protoclass import scoring`` etc. works as usual.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "binio",
    "cli",
    "clustering",
    "errors",
    "evaluation",
    "prototypes",
    "rng",
    "scoring",
    "store",
    "training",
)

__all__ = list(_SUBMODULES)


def __getattr__(name: str):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(set(globals()) | set(_SUBMODULES))
