"""Exception hierarchy shared across citysim."""


class CitySimError(Exception):
    pass


# -- gateway ---------------------------------------------------------------

class GatewayClosed(CitySimError):
    pass


class WorkerPoolClosed(CitySimError):
    pass


class HandleConsumed(CitySimError):
    pass


class BackendError(CitySimError):
    def __init__(self, message, request_id=None):
        super().__init__(message if request_id is None else f"[{request_id}] {message}")
        self.request_id = request_id


class TransportError(BackendError):
    """Connection-level failure; the gateway retries these once on a fresh connection."""


class MalformedPrompt(BackendError):
    pass


class EmptyCandidates(CitySimError, ValueError):
    pass


# -- prompt optimizer --------------------------------------------------------

class UnparseableGrouping(CitySimError):
    pass


class LikelihoodOutOfRange(CitySimError):
    pass


class DistillInvalid(CitySimError):
    pass


class AgentNotInGroup(CitySimError):
    pass


class ArityMismatch(CitySimError):
    def __init__(self, expected, got):
        super().__init__(f"expected {expected} answers, got {got}")
        self.expected = expected
        self.got = got


class ZeroBaseline(CitySimError, ZeroDivisionError):
    pass


# -- agents / environment ------------------------------------------------------

class UnparseablePlan(CitySimError):
    pass


class NoUnvisitedPOI(CitySimError):
    pass


class OutOfBounds(CitySimError, ValueError):
    pass


class CityValidationError(CitySimError, ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


# -- metrics -------------------------------------------------------------------

class EmptyTrajectory(CitySimError, ValueError):
    pass


class UnknownBlock(CitySimError, KeyError):
    pass


class ShapeMismatch(CitySimError, ValueError):
    pass


class NotNormalized(CitySimError, ValueError):
    pass


class EmptySelections(CitySimError, ValueError):
    pass


class LengthMismatch(CitySimError, ValueError):
    pass


# -- ingestion -----------------------------------------------------------------

class UnparseableRow(CitySimError, ValueError):
    pass


class NoData(CitySimError, ValueError):
    pass


class InvalidMarginal(CitySimError, ValueError):
    pass


# -- experiments ---------------------------------------------------------------

class ConfigError(CitySimError, ValueError):
    pass


class ConfigMismatch(ConfigError):
    pass


class UnknownAgent(CitySimError, KeyError):
    pass
