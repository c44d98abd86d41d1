"""Exception hierarchy for geohdp."""


class GeoHDPError(Exception):
    """Base class for all package errors."""


class InvalidCoordinateError(GeoHDPError, ValueError):
    pass


class InvalidVectorError(GeoHDPError, ValueError):
    pass


class DomainError(GeoHDPError, ValueError):
    pass


class UnsupportedDimensionError(GeoHDPError, ValueError):
    pass


class InvalidItemError(GeoHDPError, ValueError):
    pass


class StateCorruptionError(GeoHDPError, RuntimeError):
    """Raised on bookkeeping misuse (double remove, add while assigned, audit mismatch)."""


class MergeEpochError(GeoHDPError, RuntimeError):
    pass


class ConfigError(GeoHDPError, ValueError):
    """Configuration problems. ``problems`` lists every failed check."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(GeoHDPError, ValueError):
    pass


class CheckpointError(GeoHDPError, ValueError):
    pass
