"""splatforge: PBR 2D Gaussian splat assets, from fitting to relightable meshes."""

__version__ = "0.1.0"
