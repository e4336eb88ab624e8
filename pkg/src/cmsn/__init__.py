"""Convolutional multistage network (C-MSN) ensembles for RF fingerprint
classification, plus reference baselines, a synthetic radar-like data
pipeline, and a leave-one-out evaluation harness."""

__version__ = "0.1.0"
