"""One-shot converters from upstream citation-graph releases to the canonical
TSV dataset directory format."""

__version__ = "0.1.0"
