"""Jamming-signal synthesis, rasterised-waveform detection and hop simulation."""
from . import dataset, hopsim, raster, synth
from .errors import JamlabError

__version__ = "0.1.0"

__all__ = ["JamlabError", "dataset", "hopsim", "raster", "synth", "__version__"]
