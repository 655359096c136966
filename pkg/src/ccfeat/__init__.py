"""Scene-image features from annotation tags and multi-scale CNN activations,
fused for RBF-SVM classification."""

__version__ = "0.1.0"
