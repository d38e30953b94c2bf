"""Created on Oct 19 13:25:52 2026."""

__version__ = "0.1.0"
__license__ = "MIT"
__description__ = "Confidence-score purification against membership inference and model inversion."
