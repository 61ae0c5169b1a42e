"""Continual actor-critic learning with policy distillation, online EWC, and
curiosity-driven task-agnostic pretraining on a synthetic pixel-task suite."""

__version__ = "0.1.0"
