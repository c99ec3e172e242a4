"""Drone relay network simulator."""
__version__ = "0.1.0"
