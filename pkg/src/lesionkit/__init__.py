"""Skin-lesion screening toolkit: skin detection, lesion segmentation, ABCD-style
features, feature selection, classification and fusion, plus a synthetic corpus."""

__version__ = "0.1.0"
