"""Desk-scale robust-training lab: adversarial training, module robust
criticality scans and robustness-preserving fine-tuning with weight
interpolation, all on small numpy networks."""

__version__ = "0.1.0"
