"""Two-stream 3D convolutional network micro-framework.

A small, numpy-backed framework for video action recognition experiments:
3D convolution / pooling layers with from-scratch backprop, a bias-free
linear "code" output head trained toward block-structured binary targets,
dense optical-flow input encoding, clip-based training with SGD, k-NN and
kernel classification in code space, late fusion of two streams, and
gradient-ascent neuron visualization.

Submodules are imported lazily so the command-line entry point can cap
BLAS thread counts before numpy loads.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "tensor",
    "netspec",
    "layers",
    "codes",
    "network",
    "training",
    "flow",
    "data",
    "fusion",
    "viz",
    "images",
    "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
