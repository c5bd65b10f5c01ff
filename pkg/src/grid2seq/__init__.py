"""Attention-free 2D sequence-to-sequence model built on a 2DLSTM layer."""

__version__ = "0.1.0"
