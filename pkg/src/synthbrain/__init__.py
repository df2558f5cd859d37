"""synthbrain: synthetic brain-MRI generation, hierarchical 3D segmentation,
automated QC, and volumetry statistics."""

__version__ = "0.1.0"
