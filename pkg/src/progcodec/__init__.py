"""Progressive learned image codec trained with double tail-drop."""

__version__ = "0.1.0"
