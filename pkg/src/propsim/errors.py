"""Exception hierarchy shared by every propsim module.

The CLI maps these onto its exit-code contract, so new errors should
subclass one of the groups below rather than ``Exception`` directly.
"""


class PropsimError(Exception):
    """Base class for all library errors."""


class InputError(PropsimError, ValueError):
    """Bad user input: malformed files, invalid parameters, bad config."""


class GraphParseError(InputError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ValidationError(InputError):
    pass


class ContractError(PropsimError):
    """An internal precondition was violated (e.g. channels vs model)."""


class ResourceError(PropsimError):
    pass


class IntegrityError(PropsimError):
    """Stored data does not match its recorded hash."""


class ProtocolError(PropsimError):
    """Distributed sync messages do not form a disjoint cover of the nodes."""


class WorkerError(PropsimError):
    pass


class StorageError(PropsimError, OSError):
    """A required file is missing or unreadable."""
