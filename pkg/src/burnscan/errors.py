"""Exception and warning classes raised across the pipeline."""


class BurnscanError(Exception):
    """Base class for every error raised by burnscan."""


class DataError(BurnscanError):
    """Input data is missing, malformed or inconsistent."""


class RotatedGridUnsupported(DataError):
    pass


class CRSMismatch(DataError):
    pass


class GridMismatch(DataError):
    pass


class PolygonError(DataError):
    """Raised when a polygon fails validation on load."""


class EmptyCatalog(DataError):
    pass


class ReadFailure(DataError):
    def __init__(self, path, reason=""):
        self.path = str(path)
        msg = f"could not read {self.path}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class WrongBand(DataError):
    pass


class OddDimensions(DataError):
    pass


class MissingFireDate(DataError):
    pass


class CorruptStore(DataError):
    pass


class CorruptFile(DataError):
    pass


class VersionMismatch(DataError):
    pass


class EmptyScores(DataError):
    pass


class NoCoverage(DataError):
    pass


class NoOverlap(DataError):
    pass


class ShapeError(DataError, ValueError):
    pass


class ShapeMismatch(ShapeError):
    pass


class InvalidConfig(BurnscanError, ValueError):
    pass


class DivergedTraining(BurnscanError, RuntimeError):
    pass


class ZeroZoneWarning(UserWarning):
    """No pixel center fell inside a zone; its fraction is reported as 0."""


class IncompleteSceneWarning(UserWarning):
    """A granule directory was skipped while cataloguing."""
