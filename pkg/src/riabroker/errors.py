"""Exception hierarchy shared by every pipeline stage.

Class names double as the typed error names written into HTTP error bodies,
so they are part of the wire contract and must not be renamed.
"""


class BrokerError(Exception):
    """Base class for all broker errors."""

    @property
    def name(self) -> str:
        return type(self).__name__


class InvalidRequest(BrokerError, ValueError):
    pass


class EmptyQuery(InvalidRequest):
    pass


class NotFound(BrokerError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class IllegalTransition(BrokerError):
    pass


class IoError(BrokerError, OSError):
    pass


class CorruptSnapshot(BrokerError):
    pass


class DuplicateId(BrokerError):
    pass


class InvalidDescriptor(BrokerError, ValueError):
    pass


class InvalidStrategy(BrokerError, ValueError):
    pass


class WeightSumInvalid(BrokerError, ValueError):
    pass


class NegativeSurvivors(BrokerError, ValueError):
    pass


class OutOfRange(BrokerError, ValueError):
    pass


class WireError(BrokerError, ValueError):
    """Base for parse and validation failures on wire documents."""


class XmlMalformed(WireError):
    pass


class MissingBody(WireError):
    pass


class MissingMessageId(WireError):
    pass


class MissingField(WireError):
    def __init__(self, field: str):
        super().__init__(f"missing field: {field}")
        self.field = field


class BadPort(WireError):
    pass


class MissingBinding(WireError):
    pass


class InvalidQos(WireError, InvalidDescriptor):
    pass


class InvalidTrace(WireError):
    pass
