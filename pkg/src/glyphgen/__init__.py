"""glyphgen: joint glyph-face image and action-unit label generation."""

__version__ = "0.1.0"
