"""Nested word/sentence selective-scan segmentation for infrared small targets.

Public surface: the estimator facade (``MimSegmenter``), the model and its
config (``MimModel`` / ``MimConfig``), the tensor engine (``Tensor``), and
the training/evaluation helpers.  Submodules are imported lazily so the CLI
can cap BLAS threading before the numerical stack loads.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "Tensor": ("mimnet.tensor", "Tensor"),
    "Parameter": ("mimnet.tensor", "Parameter"),
    "grad_check": ("mimnet.tensor", "grad_check"),
    "MimConfig": ("mimnet.arch", "MimConfig"),
    "MimModel": ("mimnet.arch", "MimModel"),
    "build_model": ("mimnet.arch", "build_model"),
    "MimSegmenter": ("mimnet.estimator", "MimSegmenter"),
    "TrainConfig": ("mimnet.train", "TrainConfig"),
    "train": ("mimnet.train", "train"),
    "evaluate": ("mimnet.train", "evaluate"),
    "dice_loss": ("mimnet.train", "dice_loss"),
    "SynthConfig": ("mimnet.data", "SynthConfig"),
    "generate_dataset": ("mimnet.data", "generate_dataset"),
    "load_dataset": ("mimnet.data", "load_dataset"),
    "MetricsReport": ("mimnet.metrics", "MetricsReport"),
    "FlopsReport": ("mimnet.complexity", "FlopsReport"),
    "count_flops": ("mimnet.complexity", "count_flops"),
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    try:
        module_name, attr = _EXPORTS[name]
    except KeyError:
        raise AttributeError(f"module 'mimnet' has no attribute {name!r}") from None
    import importlib

    return getattr(importlib.import_module(module_name), attr)


def __dir__():
    return __all__
