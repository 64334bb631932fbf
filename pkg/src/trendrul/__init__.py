"""Trend-feature remaining-useful-life prediction.

Sensor signals are decomposed with complete ensemble EMD, the residue plus the
slowest modes form a trend feature, and a two-layer LSTM maps trend-feature
sequences to per-cycle RUL.
"""

__version__ = "0.1.0"
