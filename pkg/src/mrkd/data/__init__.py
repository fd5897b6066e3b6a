from .batching import batcher
from .manifest import DatasetManifest, load_manifest, write_manifest
from .synthetic import gen_synthetic

__all__ = [
    "DatasetManifest",
    "batcher",
    "gen_synthetic",
    "load_manifest",
    "write_manifest",
]
