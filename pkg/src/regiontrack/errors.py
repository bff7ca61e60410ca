"""Exception types shared across the tracking pipeline."""


class RegionTrackError(Exception):
    """Base class for all library errors."""


class PointBehindCamera(RegionTrackError):
    """A 3D point has non-positive depth and cannot be projected."""


class DegenerateMesh(RegionTrackError):
    """Mesh has no vertices or is otherwise unusable."""


class EmptyMesh(DegenerateMesh):
    """Metric asked for on a mesh without vertices."""


class InvalidFrustum(RegionTrackError):
    """Near/far planes do not describe a valid view frustum."""


class NotVisible(RegionTrackError):
    """Object projects entirely outside the image."""


class EmptyRegion(RegionTrackError):
    """Requested object index has no pixels in the silhouette mask."""


class BorderPixel(RegionTrackError):
    """Operation needs a 1 px margin around the pixel."""


class Uninitialized(RegionTrackError):
    """Histogram queried before its first initialization frame."""


class NotCovered(RegionTrackError):
    """Pixel lies outside every active histogram region."""


class NoVisibleCenters(RegionTrackError):
    """No model vertex projects close enough to the contour."""


class DegenerateDepth(RegionTrackError):
    """Surface point sits at or behind the camera plane."""


class SingularSystem(RegionTrackError):
    """Normal equations could not be factorized even with damping."""


class EmptyAccumulation(RegionTrackError):
    """No admissible pixel contributed to the normal equations."""


class TrackingDiverged(RegionTrackError):
    """Residual grew past the divergence threshold during optimization."""


class SequenceFormat(RegionTrackError):
    """Sequence directory or one of its files is malformed."""


class DimensionMismatch(RegionTrackError):
    """Two images that must share a shape do not."""
