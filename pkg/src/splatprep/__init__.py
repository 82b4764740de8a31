"""Scene preprocessing and evaluation for Gaussian-splatting pipelines.

Stages: convex-hull outlier filtering, camera clustering with
representative view selection, multi-view segment fusion, mask-area
guided densification and image/embedding/point-set metrics.
"""

__version__ = "0.1.0"
