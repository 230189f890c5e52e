"""Weakly singular Cucker-Smale / Kuramoto-type particle laboratory."""
