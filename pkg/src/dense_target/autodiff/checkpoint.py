"""Parameter checkpoints: one ``.dtr`` per parameter plus a JSON manifest."""

from __future__ import annotations

import json
import os

import numpy as np

from ..errors import FormatError
from ..heatmap import read_raster, write_raster

MANIFEST = "manifest.json"


def _as_2d(a: np.ndarray) -> np.ndarray:
    if a.ndim == 0:
        return a.reshape(1, 1)
    return a.reshape(-1, a.shape[-1])


def save_checkpoint(params: dict, directory) -> None:
    """Write ``name -> array`` (or Tensor) losslessly into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    manifest = {}
    for name, value in params.items():
        data = np.asarray(getattr(value, "data", value), dtype=np.float64)
        fname = f"{name}.dtr"
        write_raster(_as_2d(data), os.path.join(directory, fname))
        manifest[name] = {"file": fname, "shape": list(data.shape)}
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(directory) -> dict:
    with open(os.path.join(directory, MANIFEST)) as fh:
        manifest = json.load(fh)
    out = {}
    for name, entry in manifest.items():
        data = read_raster(os.path.join(directory, entry["file"]))
        shape = tuple(entry["shape"])
        if data.size != int(np.prod(shape)):
            raise FormatError(f"{name}: stored {data.shape} does not fit shape {shape}")
        out[name] = data.reshape(shape)
    return out
