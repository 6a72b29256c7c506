"""Occlusion-weighted variational optical flow."""
