"""Staggered smoke-control-area rollout analysis: spatial assignment,
plume-based downwind regions, fixed-effects event studies, group-time
ATTs and a synthetic-data oracle."""

__version__ = "0.1.0"
