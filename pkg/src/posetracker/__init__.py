"""Online top-down pose tracking with a Siamese graph-convolution pose matcher."""
__version__ = "0.1.0"
