"""Popularity-driven coded/uncoded edge caching with a dual-path Transformer."""

__version__ = "0.1.0"
