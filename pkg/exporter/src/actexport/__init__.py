"""Transformer-encoder activation exporter for the PiM simulator's
tensor-exchange format."""

from .exchange import write_exchange
from .exporter import (
    ExportManifest,
    UnsupportedArchitectureError,
    export_activations,
    quantize_symmetric,
)

__version__ = "0.1.0"
