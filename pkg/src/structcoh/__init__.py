"""StructCoh: dual-graph document encoding with hierarchical contrastive training."""

__version__ = "0.1.0"
