"""Toolkit for measuring how mixed-sample data augmentation affects model
interpretability: alignment with human annotations, faithfulness via
inter-model deletion/insertion, and human-recognizable concepts via
network dissection."""

__version__ = "0.1.0"
