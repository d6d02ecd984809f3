"""GAIN imputation with transfer learning from a complete source table."""

__version__ = "0.1.0"
