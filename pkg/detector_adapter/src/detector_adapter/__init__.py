"""detector-adapter: detector inference wrapper for the defect-analysis
annotation schema.
"""

from .model import DEFAULT_CLASS_MAP, AdapterConfig, ModelLoadError
from .schema import CLASS_NAMES, SchemaError, read_document, validate_document, write_document
from .stub import stub_detections

__version__ = "0.1.0"
