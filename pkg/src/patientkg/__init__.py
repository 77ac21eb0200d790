"""Patient-level knowledge graphs, entropy analysis and a dual-branch ICD coder."""

__version__ = "0.1.0"
