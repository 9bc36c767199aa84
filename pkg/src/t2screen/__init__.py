"""Nuclear-spin-bath Hahn-echo coherence screening for 2D materials,
3D crystals and heterostructures."""

__version__ = "0.1.0"
