"""Exception hierarchy shared by every module of the package."""


class DidGeomError(ValueError):
    """Base class for all validation errors raised by :mod:`did_geom`."""


# kitti_io
class MissingKey(DidGeomError):
    pass


class MalformedNumber(DidGeomError):
    pass


class WrongArity(DidGeomError):
    pass


class MissingScore(DidGeomError):
    pass


class TruncatedFile(DidGeomError):
    pass


class InvalidLabel(DidGeomError):
    pass


class InvalidCalibration(DidGeomError):
    pass


# geometry
class BehindCamera(DidGeomError):
    pass


class NonPositiveDepth(DidGeomError):
    pass


class InvalidBinCount(DidGeomError):
    pass


class DegenerateBox(DidGeomError):
    pass


# depth_labels
class EmptyBox(DidGeomError):
    pass


class NonPositiveInstanceDepth(DidGeomError):
    pass


# depth_fusion
class InvalidUncertainty(DidGeomError):
    pass


class NegativeUncertainty(DidGeomError):
    pass


class NoValidCells(DidGeomError):
    pass


class OutOfRange(DidGeomError):
    pass


# augmentation
class BadRange(DidGeomError):
    pass


class BadTransform(DidGeomError):
    pass


class ObjectCulled(DidGeomError):
    pass


# evaluation
class FrameMismatch(DidGeomError):
    pass


# synth
class PlacementFailure(DidGeomError):
    pass


# cli
class UnknownSubcommand(DidGeomError):
    pass
