"""Ricci flow of rotationally symmetric asymptotically flat metrics.

Submodules: ``geometry`` (profiles and curvature), ``flow`` (the flow and
its heat companion), ``functionals`` (Sobolev, entropy and decay
diagnostics), ``c1_search`` (neck-profile energy search) and ``cli``.
"""

__version__ = "0.1.0"
