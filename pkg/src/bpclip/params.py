"""ParameterSet: a named-tensor collection with frozen/trainable flags."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import archive

NORM_SUFFIXES = ("weight", "bias", "running_mean", "running_var")


@dataclass
class ParameterSet:
    tensors: dict[str, np.ndarray]
    frozen: set[str] = field(default_factory=set)

    def names(self):
        return sorted(self.tensors)

    def __contains__(self, name):
        return name in self.tensors

    def __getitem__(self, name):
        return self.tensors[name]


def load_parameter_archive(path) -> ParameterSet:
    """Load a tensor archive into a ParameterSet (checksum verified)."""
    return ParameterSet(tensors=archive.load_archive(path))


def save_parameter_archive(params: ParameterSet, path) -> None:
    archive.save_archive(params.tensors, path)


def is_norm_entry(name: str) -> bool:
    """True for normalization-layer statistics and affine parameters.

    Convention: normalization layers are registered under a dotted
    component named "norm", e.g. "backbone.stage1.norm.weight".
    """
    parts = name.split(".")
    return len(parts) >= 2 and parts[-2] == "norm" and parts[-1] in NORM_SUFFIXES


def set_norm_frozen(params: ParameterSet) -> ParameterSet:
    """Flag all normalization-layer entries as non-trainable.

    Running statistics are never optimizer-updated regardless; freezing
    additionally pins the affine weight/bias. Everything else stays
    trainable. A set with no norm entries is returned unchanged.
    """
    norm_names = {n for n in params.tensors if is_norm_entry(n)}
    if not norm_names:
        return params
    return ParameterSet(tensors=params.tensors, frozen=set(params.frozen) | norm_names)
