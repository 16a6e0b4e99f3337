"""Morphological classifiers."""
