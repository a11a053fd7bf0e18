"""fedbalance: deterministic federated-learning simulation with
augmentation-based label-distribution balancing."""

__version__ = "0.1.0"
