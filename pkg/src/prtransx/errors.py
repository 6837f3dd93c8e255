"""Exception hierarchy shared across the package."""


class PrTransXError(Exception):
    """Base class for all package errors."""


class ConfigError(PrTransXError, ValueError):
    """Invalid or incomplete configuration."""


class ConflictingTripletError(PrTransXError, ValueError):
    def __init__(self, key, p_first, p_second):
        self.key = key
        super().__init__(
            f"duplicate triplet {key} with conflicting probabilities "
            f"{p_first!r} and {p_second!r}"
        )


class ExtractionError(PrTransXError):
    def __init__(self, visit_id, reason):
        self.visit_id = visit_id
        super().__init__(f"visit {visit_id}: {reason}")


class SamplingError(PrTransXError):
    def __init__(self, triplet, retries):
        self.triplet = triplet
        super().__init__(
            f"no valid negative for positive {triplet} after {retries} retries"
        )


class TrainingError(PrTransXError):
    """Non-finite loss or parameters encountered during training."""

    def __init__(self, epoch, batch, what):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite {what} at epoch {epoch}, batch {batch}")


class CheckpointError(PrTransXError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class VariantMismatchError(CheckpointError):
    pass
