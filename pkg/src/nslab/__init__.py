"""Newton-Sabatier fixed-energy inversion lab."""

__version__ = "0.1.0"
