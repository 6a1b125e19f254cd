"""Coupled cortical surface reconstruction from segmentation volumes.

The pipeline: signed distance fields of the inner (white matter) and outer
(pial) masks are summed to define an implicit midthickness surface, meshed
by marching cubes and repaired to spherical topology; a stationary velocity
field (integrated by scaling and squaring) warps that mesh, and a positive
half-thickness field offsets it inward/outward along vertex normals to
produce both surfaces at once.  Both fields are fitted per instance by a
first-order adaptive optimizer on bidirectional Chamfer losses plus edge
length and normal consistency regularizers, with hand-written adjoints.
"""

from ._kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
