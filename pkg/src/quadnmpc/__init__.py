"""Quadrotor nonlinear MPC: B-spline tracking with repulsive-potential obstacle avoidance."""

__version__ = "0.1.0"
