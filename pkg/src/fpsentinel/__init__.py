"""Fingerprinting telemetry toolkit: heuristics, corpus analytics, and
differentially private federated training of a detection model."""

__version__ = "0.1.0"
