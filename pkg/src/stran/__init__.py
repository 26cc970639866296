"""Reference-based video enhancement: texture transfer from a high-resolution reference frame."""

__version__ = "0.1.0"
