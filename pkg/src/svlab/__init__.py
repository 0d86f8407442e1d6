"""Line-variety incidence laboratory in R^4."""
__version__ = "0.1.0"
