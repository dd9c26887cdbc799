"""Exception types shared across the package."""


class BlockPgError(Exception):
    """Base class for package errors."""


class ModelError(BlockPgError):
    """Invalid model specification or model/observation mismatch."""


class CoverError(BlockPgError):
    """Invalid block-cover parameters or an operation outside its preconditions."""


class CapacityError(BlockPgError):
    """An exact-enumeration cap would be exceeded."""


class WeightCollapseError(BlockPgError):
    """Every particle weight vanished at some time step (positivity violated)."""

    def __init__(self, time_index: int):
        self.time_index = time_index
        super().__init__(
            f"all particle weights are zero at time {time_index}; "
            "the model violates emission/transition positivity on the visited states"
        )
