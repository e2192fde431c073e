"""Planning with multiple transition models whose trust regions are learned deviation estimators."""

__version__ = "0.1.0"
