"""Lane-attention spatio-temporal graph trajectory predictor."""
__version__ = "0.3.0"
