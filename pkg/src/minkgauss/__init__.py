"""Entire spacelike hypersurfaces of constant Gauss curvature in Minkowski space."""
