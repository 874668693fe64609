"""From-scratch CNN toolkit for smile detection with transfer learning."""

__version__ = "0.1.0"
