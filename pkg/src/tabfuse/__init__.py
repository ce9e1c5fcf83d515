"""Extract and fuse heterogeneous HTML tables with a tree LSTM node classifier."""

__version__ = "0.1.0"
