"""Synchrophasor event-classification toolkit.

Generates labeled synthetic PMU streams, cuts event windows, derives
gradient/ROCOF features, trains a from-scratch feed-forward classifier, and
tunes its hyperparameters with a Gaussian-process surrogate and expected
improvement.
"""

__version__ = "0.1.0"
