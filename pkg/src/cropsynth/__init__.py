"""Synthetic training data for in-season crop progress estimation.

A stochastic weather generator drives a phenology and canopy-reflectance
surrogate; the resulting NDVI and growing-degree-day histograms train a
bidirectional LSTM that estimates the weekly distribution of crop stages.
"""
__version__ = "0.1.0"
