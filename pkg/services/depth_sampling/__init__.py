"""Geometry-aware sparse depth sampling.

Back-projects depth maps, estimates PCA normals, scores pixels by incidence
angle and draws sparse depth samples proportionally to those scores.
"""

__version__ = "0.1.0"
