"""Photon-counting OTDR simulation and trace analysis."""
