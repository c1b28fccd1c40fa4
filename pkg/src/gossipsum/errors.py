"""Exception types shared across the package."""


class TopologyError(ValueError):
    """Malformed or disconnected communication graph."""


class DataFormatError(ValueError):
    """Dataset file that does not parse; message carries the location."""


class StateError(RuntimeError):
    """Operation invoked on state that cannot serve it (e.g. empty shard)."""


class ConfigError(ValueError):
    """Unparseable or invalid run configuration; message names the key."""


class DivergenceError(RuntimeError):
    """Optimizer state left the finite envelope.

    Carries where the blow-up was detected so the harness can report it
    and flush partial metrics.
    """

    def __init__(self, message: str, epoch: int | None = None,
                 step: int | None = None, worker: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.worker = worker
