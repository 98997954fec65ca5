"""Numerical laboratory for Ricci-flow ODEs of connection metrics on torus bundles."""
