"""Out-of-sample scoring and automated selection of causal effect estimators."""

__version__ = "0.1.0"
