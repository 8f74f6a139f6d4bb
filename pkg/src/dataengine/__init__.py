"""Ensemble-consensus data selection engine."""
