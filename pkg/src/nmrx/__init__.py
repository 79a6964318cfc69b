"""NMR processing from raw FIDs to annotated spectra, candidate scoring and an elucidation environment."""

from .errors import NmrxError, ProcessingError, ValidationError

__version__ = "0.1.0"
__all__ = ["NmrxError", "ProcessingError", "ValidationError", "__version__"]
