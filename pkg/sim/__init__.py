"""Desk-scale closed-loop simulation: ground-truth scenes, a synthetic depth
camera and a kinematic vehicle."""
