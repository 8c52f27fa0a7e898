"""Shape-prior driven unsupervised segmentation with three chained image translators."""

__version__ = "0.1.0"
