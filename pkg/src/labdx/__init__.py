"""Diagnosis from incomplete lab-test sequences with joint generative-discriminative models."""
__version__ = "0.1.0"
