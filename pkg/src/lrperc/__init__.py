"""Long-range percolation on Z^d: sampling, chemical distance, good-block renormalization."""

__version__ = "0.1.0"
