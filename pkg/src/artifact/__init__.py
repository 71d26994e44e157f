"""Two-stage transfer of a frozen point-cloud transformer to point-cloud video.

Stage 1 aligns a trainable 4D embedder to frozen 3D embeddings under an
optimal-transport dataset distance; stage 2 tunes a bottleneck video adapter
and a spatial context MLP around the frozen backbone.
"""

__version__ = "0.1.0"
