"""Multi-modal remaining-useful-life regression for turbofan sensor data.

Kept import-light on purpose: the CLI pins BLAS thread counts before any
numpy-importing submodule loads.
"""

__version__ = "0.1.0"
