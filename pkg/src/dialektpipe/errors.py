"""Exception hierarchy; each family maps to a CLI exit code."""


class DialektError(Exception):
    exit_code = 1


class DataError(DialektError):
    """Invalid input data (manifests, RTTM, ratings, audio headers)."""

    exit_code = 1


class ConfigError(DialektError):
    exit_code = 2


class BackendError(DialektError):
    """A backend violated the wire protocol or could not be reached."""

    exit_code = 3


class UnsupportedAudioError(DataError):
    pass
