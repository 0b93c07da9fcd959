"""Multi-contrast volumetric lesion segmentation with sequence dropout."""

__version__ = "0.1.0"

DEFAULT_CHANNELS = ("T1", "T2", "PD", "FLAIR")
