"""Python access to the convolutional neural operator core.

Configs are plain dicts; arrays are numpy, laid out (n, c, s, s).
"""

import json

from ._cno import CnoError, __version__
from . import _cno

__all__ = [
    "CnoError",
    "Model",
    "__version__",
    "default_params",
    "fit_power_law",
    "generate",
    "median",
    "read_dataset",
    "relative_l1",
    "spectral_resample",
    "write_dataset",
]


def _spec(benchmark, train, val=0, test=0, resolution=64, seed=0, distribution="in_dist", params=None, normalize=True):
    return json.dumps(
        {
            "benchmark": benchmark,
            "distribution": distribution,
            "splits": {"train": train, "val": val, "test": test},
            "resolution": resolution,
            "seed": seed,
            "params": params or {},
            "normalize": normalize,
        }
    )


def _dataset(d):
    d = dict(d)
    d["spec"] = json.loads(d["spec"])
    if d["normalization"] is not None:
        d["normalization"] = json.loads(d["normalization"])
    return d


def generate(benchmark, train, val=0, test=0, resolution=64, seed=0, distribution="in_dist", params=None, threads=1):
    """Generate a dataset in memory. Returns a dict with raw float32 arrays."""
    spec = _spec(benchmark, train, val, test, resolution, seed, distribution, params)
    return _dataset(_cno.generate(spec, threads))


def write_dataset(path, benchmark, train, val=0, test=0, resolution=64, seed=0, distribution="in_dist", params=None, threads=1):
    """Generate and store a dataset; returns its payload hash."""
    spec = _spec(benchmark, train, val, test, resolution, seed, distribution, params)
    return _cno.generate_and_write(spec, str(path), threads)


def read_dataset(path):
    return _dataset(_cno.read_dataset(str(path)))


def default_params(benchmark, distribution="in_dist"):
    return json.loads(_cno.default_params(benchmark, distribution))


def relative_l1(pred, truth):
    return _cno.relative_l1(pred, truth)


def median(values):
    return _cno.median(list(values))


def fit_power_law(n, errors):
    """Least-squares fit of E = (N0/N)^r. Returns (r, N0, residual)."""
    return _cno.fit_power_law(list(map(float, n)), list(map(float, errors)))


def spectral_resample(field, target):
    return _cno.spectral_resample(field, target)


class Model:
    """Thin wrapper over the C++ model."""

    def __init__(self, config=None, seed=0, _impl=None):
        self._impl = _impl if _impl is not None else _cno.CnoModel(json.dumps(config or {}), seed)

    @classmethod
    def load(cls, path):
        return cls(_impl=_cno.CnoModel.load(str(path)))

    def save(self, path):
        self._impl.save(str(path))

    @property
    def config(self):
        return json.loads(self._impl.config_json())

    def parameter_count(self):
        return self._impl.parameter_count()

    def hash(self):
        return self._impl.hash()

    def predict(self, x):
        return self._impl.predict(x)
