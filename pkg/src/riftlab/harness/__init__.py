"""Datasets, corruptions, metrics, checkpoints, run configuration and CLI."""
