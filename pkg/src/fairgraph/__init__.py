"""Fairness-aware graph editing and counterfactual-augmented fair GNN training."""

__version__ = "0.1.0"
