"""Exception hierarchy shared across the toolkit."""


class VbmError(Exception):
    """Base class for all vbmpipe errors."""


class GeometryMismatch(VbmError):
    """Two volumes/fields that must share dims and spacing do not."""


# --- volume / NIfTI I/O ---

class MalformedHeader(VbmError):
    """Header failed basic sanity checks under both byte orders."""


class UnsupportedDatatype(VbmError):
    """NIfTI datatype code outside the supported subset."""


class TruncatedData(VbmError):
    """File ended before the full voxel payload."""


class IoFailure(VbmError):
    """Underlying OS-level read/write failure."""


class DegenerateIntensity(VbmError):
    """Intensity percentiles collapsed; normalization undefined."""


# --- tissue maps ---

class ValueOutOfRange(VbmError):
    """Tissue value outside the encodable [0, 3] range."""


class NonAdjacentMixture(VbmError):
    """Probability voxel mixes classes that are not neighbours on the 0-3 scale."""


# --- patch layout ---

class CoverageImpossible(VbmError):
    """Initial patch grid cannot cover all tissue voxels."""


class EmptyCoverageWarning(UserWarning):
    """Some output voxels were covered by no patch (filled with zero)."""


# --- augmentation ---

class MagnitudeOutOfRange(VbmError):
    """Augmentation magnitude outside its documented range."""


# --- registration ---

class EmptyMask(VbmError):
    """Registration mask contains no foreground voxels."""


class NonFiniteLoss(VbmError):
    """Optimization produced a NaN/Inf loss it could not recover from."""


class JacobianFoldover(VbmError):
    """Deformation folded: minimum Jacobian determinant <= 0 at termination."""


# --- statistics ---

class RankDeficientDesign(VbmError):
    """Design matrix columns are linearly dependent."""


class SubjectCountMismatch(VbmError):
    """Number of maps does not match the design matrix rows."""


class DegenerateVariance(VbmError):
    """Correlation undefined: one input has zero variance."""


# --- pipeline ---

class ConfigInvalid(VbmError):
    """Pipeline configuration failed validation."""
