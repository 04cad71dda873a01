"""Coarse-to-fine point cloud correspondence search and rigid registration."""
