"""Cut locus and singular set computation for Finsler and Riemannian
manifolds with boundary: exponential maps from the boundary, focal point
classification, cut point taxonomy and static Hamilton-Jacobi solutions.
"""

__version__ = "0.1.0"
