"""Level-set CutFEM shape optimization of a compression-driver phase plug."""
__version__ = "0.1.0"
