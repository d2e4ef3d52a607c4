"""Trajectory-tracking control lab: bicycle-model MPC expert, neural
imitation of it, and a DDPG alternative, plus the evaluation harness."""

__version__ = "0.1.0"
