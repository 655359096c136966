"""Backbone-to-interchange converter for the ccfeat content pipeline."""

__version__ = "0.1.0"
