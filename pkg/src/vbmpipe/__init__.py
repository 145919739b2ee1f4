"""vbmpipe: voxel-based morphometry preprocessing and statistics toolkit."""

__version__ = "0.1.0"

from .volume import Volume3D, AffineTransform  # noqa: F401
from .fields import DisplacementField3D, ShootingConfig  # noqa: F401
from .losses import ElasticityParams, SupervisedLossConfig  # noqa: F401
