"""Offline analytics for multimodal group-interaction logs.

Sessions of speech, gaze and pose streams are turned into windowed
sociograms, network metrics, dyadic feature segments and behavior clusters.
"""

from __future__ import annotations

__version__ = "0.1.0"
