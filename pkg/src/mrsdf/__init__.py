"""Multiresolution latent-grid signed distance fields.

A small numpy/scipy library that trains a hierarchical latent
representation of SDFs on procedural CSG shapes and reconstructs,
progressively refines, or completes shapes by encoder inference or
decoder-only latent optimization.
"""

from __future__ import annotations

__version__ = "0.1.0"
