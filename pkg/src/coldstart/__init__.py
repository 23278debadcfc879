"""Adaptive cold-start interviews for movie recommendation.

A Q-network learns which movies to ask a brand-new user about; the answers
build a 200-dim state from which either an embedding head (user vector
against matrix factors) or a rating head (direct rating prediction) scores
every movie in the catalog.
"""

__version__ = "0.1.0"
