"""Python interface to the hs3 benchmark core.

The compiled extension carries the implementation; this package re-exports
it. In an installed wheel the extension lives inside the package; in a build
tree it sits on ``sys.path`` directly (``PYTHONPATH=<build dir>``).
"""

try:
    from . import _hs3bench as _core  # installed layout
except ImportError:  # pragma: no cover - build-tree layout
    import _hs3bench as _core

Descriptor = _core.Descriptor
SplitManifest = _core.SplitManifest
Preproc = _core.Preproc
Model = _core.Model

load_descriptor = _core.load_descriptor
generate_fixture = _core.generate_fixture
list_samples = _core.list_samples
load_sample = _core.load_sample
make_splits = _core.make_splits
fit_preproc = _core.fit_preproc
normalize_value = _core.normalize_value
score_labels = _core.score_labels
build_model = _core.build_model
load_model = _core.load_model
train_model = _core.train_model
evaluate_model = _core.evaluate_model
run_record = _core.run_record
load_run_record = _core.load_run_record

IGNORE = _core.IGNORE
__version__ = _core.__version__

__all__ = [
    "Descriptor",
    "SplitManifest",
    "Preproc",
    "Model",
    "load_descriptor",
    "generate_fixture",
    "list_samples",
    "load_sample",
    "make_splits",
    "fit_preproc",
    "normalize_value",
    "score_labels",
    "build_model",
    "load_model",
    "train_model",
    "evaluate_model",
    "run_record",
    "load_run_record",
    "IGNORE",
    "__version__",
]
