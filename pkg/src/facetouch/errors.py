"""Exception hierarchy shared by all facetouch modules."""


class FaceTouchError(Exception):
    """Base class for all errors raised by this package."""


# --- ingest ---

class MissingFile(FaceTouchError):
    pass


class MalformedManifest(FaceTouchError):
    pass


class DuplicateVideoId(MalformedManifest):
    pass


class MalformedRecord(FaceTouchError):
    """A landmark stream line failed validation; carries the line number."""

    def __init__(self, message, line_number=None):
        super().__init__(message if line_number is None
                         else f"line {line_number}: {message}")
        self.line_number = line_number


class NonMonotonicFrames(FaceTouchError):
    pass


class MalformedLabels(FaceTouchError):
    pass


class RegionWithoutTouch(MalformedLabels):
    pass


class UnsupportedFormat(FaceTouchError):
    pass


class TruncatedFile(FaceTouchError):
    pass


class MalformedMullen(FaceTouchError):
    pass


class NonPositiveAge(MalformedMullen):
    pass


class IoError(FaceTouchError):
    pass


class HeaderMismatch(FaceTouchError):
    pass


# --- preprocess ---

class NoUsableTrunk(FaceTouchError):
    pass


# --- imaging ---

class NoFaceAnywhere(FaceTouchError):
    pass


class DimensionMismatch(FaceTouchError):
    pass


# --- learning ---

class DegenerateLabels(FaceTouchError):
    pass


class TooFewRows(FaceTouchError):
    pass


class NonFiniteLoss(FaceTouchError):
    pass


class SingleClass(FaceTouchError):
    pass


class NoConvergence(FaceTouchError):
    def __init__(self, message, kkt_violation=None):
        super().__init__(message)
        self.kkt_violation = kkt_violation


class SingleCombination(FaceTouchError):
    pass


class ManifestMismatch(FaceTouchError):
    pass


# --- pipeline ---

class TooFewGroups(FaceTouchError):
    pass


class ManifestFingerprintMismatch(FaceTouchError):
    pass


class VersionMismatch(FaceTouchError):
    pass


class CorruptModel(FaceTouchError):
    pass


# --- evaluation ---

class EmptyInput(FaceTouchError):
    pass


class LengthMismatch(FaceTouchError):
    pass


class ZeroVariance(FaceTouchError):
    pass


class TooFewPoints(FaceTouchError):
    pass


class InsufficientVisits(FaceTouchError):
    pass


# --- synthetic data ---

class InvalidConfig(FaceTouchError):
    pass
