"""Vision-language score matrix exporter for the flab pipeline."""

from .export import ExportJob, export_scores
from .embedder import get_embedder

__version__ = "0.1.0"
