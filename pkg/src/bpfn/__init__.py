"""In-context tabular classification with a prior-fitted transformer.

A small transformer is pre-trained on synthetic classification episodes
and then predicts labels for new tables in a single forward pass,
conditioning on labeled support rows.  Downstream adaptation trains a
stack of batch-ensemble feature encoders against the frozen backbone;
inference aggregates bootstrap-resampled contexts, and an
error-correcting output code extends the fixed 10-class head to larger
label sets.

Submodules are imported lazily so the command-line entry point can pin
BLAS thread counts before numpy loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_SUBMODULES = (
    "adapter",
    "analysis",
    "backbone",
    "checkpoint",
    "cli",
    "config",
    "data",
    "finetune",
    "inference",
    "optim",
    "prior",
    "rng",
    "tensor",
)

_SYMBOLS = {
    "Tensor": "tensor",
    "GradTape": "tensor",
    "ShapeError": "tensor",
    "using_dtype": "tensor",
    "Episode": "prior",
    "PriorConfig": "prior",
    "BackboneConfig": "backbone",
    "BackboneWeights": "backbone",
    "EncoderStack": "adapter",
    "BatchEnsembleLinear": "adapter",
    "FinetuneConfig": "finetune",
    "ContextStrategy": "inference",
    "AggregationRule": "inference",
    "EcocCodebook": "inference",
    "Dataset": "data",
}


def __getattr__(name):
    if name in _SUBMODULES:
        return import_module(f".{name}", __name__)
    if name in _SYMBOLS:
        return getattr(import_module(f".{_SYMBOLS[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(set(globals()) | set(_SUBMODULES) | set(_SYMBOLS))
