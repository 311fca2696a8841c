"""Cartesian position control, grasp planning and interpolated goal reaching for a three-finger hand."""

__version__ = "0.1.0"
