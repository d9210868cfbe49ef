"""Cross-modal domain transfer for pose estimation at desk scale.

A pose estimator trained on synthetic depth windows is made usable on
pseudo-color windows through a learned color-to-depth feature mapping and an
MMD alignment of real and synthetic depth features.
"""

__version__ = "0.1.0"
