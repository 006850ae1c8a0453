"""Cause-effect video caption toolkit.

Generation and quality filtering of two-part (cause/effect) captions,
a two-stage dual-encoder caption network with its ablations, reference
metrics, and a human-evaluation protocol with an HTTP rating service.
"""

__version__ = "0.1.0"
