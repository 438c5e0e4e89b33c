"""Trajectory prediction with spatial-temporal fusion over an integrated 3D graph.

The package is numpy-only.  ``tensor`` holds a small reverse-mode autodiff,
``graph`` builds the integrated spatiotemporal adjacency, ``model`` the
network, ``training`` the loop and checkpoints, ``metrics`` ADE/FDE/RMSE
and their category-weighted sums, and ``cli`` the command-line interface.
"""

__version__ = "0.1.0"
