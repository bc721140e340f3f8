"""File-protocol adapter between the gepc pipeline and a diffusion denoiser.

The primary pipeline writes ``request-<id>.gtf`` / ``request-<id>.meta``
pairs into a shared directory; this package evaluates a denoiser over each
batch and writes ``response-<id>.gtf`` (or ``response-<id>.err`` with a
one-line reason).  It never computes any scoring statistics itself — all
group transports and reductions happen on the requesting side.
"""

from .gtf import read_gtf, write_gtf
from .serve import (BatchRequest, MalformedRequestError, constant_stub,
                    parse_meta, serve, serve_forever)

__all__ = ["read_gtf", "write_gtf", "BatchRequest", "MalformedRequestError",
           "constant_stub", "parse_meta", "serve", "serve_forever"]
