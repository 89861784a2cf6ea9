"""Line-protocol model worker for the retrieval pipeline."""

__version__ = "0.1.0"
