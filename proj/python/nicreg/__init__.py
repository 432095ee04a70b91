"""Python access to the nicreg core."""

import json

from . import _nicreg
from ._nicreg import (
    NicregError,
    bd_rate,
    entropy,
    gaussian_interval_mass,
    interval_rate_bits,
)

__all__ = [
    "NicregError",
    "bd_rate",
    "default_config",
    "entropy",
    "gaussian_interval_mass",
    "identity_probe",
    "interval_rate_bits",
    "train",
    "verify_identities",
]


def default_config():
    return json.loads(_nicreg.default_config())


def verify_identities(count=100, seed=1, max_alphabet=64):
    return json.loads(_nicreg.verify_identities(count, seed, max_alphabet))


def train(config, output_root=""):
    return json.loads(_nicreg.train(json.dumps(config), str(output_root)))


def identity_probe(checkpoint, source=None, axes=2, points=32, bins=32, seed=1):
    source = default_config()["source"] if source is None else source
    return json.loads(
        _nicreg.identity_probe(str(checkpoint), json.dumps(source), axes, points, bins, seed)
    )
