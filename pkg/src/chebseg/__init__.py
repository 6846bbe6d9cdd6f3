"""Point-cloud semantic segmentation with kNN graph encodings and Chebyshev graph convolutions."""

from .core import (IGNORE_LABEL, S3DIS_LABELS, SEMANTIC3D_LABELS, SYNTHETIC_LABELS, Block, LabelSet,
                   Point3, PointCloud, PropagationKind, PropagationMatrix, SparseAdjacency,
                   ValidationReport, validate_cloud)
from .graph import (GraphConfig, SpatialIndex, build_adjacency, knn_neighbors, normalized_laplacian,
                    renormalized_adjacency, rescale_laplacian)
from .spectral import (PolynomialFilter, SpectralDecomposition, chebyshev_apply, monomial_apply,
                       spectral_convolve, spectral_filter_oracle)

__version__ = "0.1.0"
