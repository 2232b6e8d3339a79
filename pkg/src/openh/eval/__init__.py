"""Rollout fidelity metrics and trial-outcome statistics."""
