"""Exception types shared across the toolkit, with their CLI exit codes."""


class LivenessKitError(Exception):
    exit_code = 2


class DataError(LivenessKitError):
    """Bad or missing input data (exit code 2)."""

    exit_code = 2


class ProtocolViolation(LivenessKitError):
    """Leakage or an evaluation-protocol breach (exit code 3)."""

    exit_code = 3


class TrainingDiverged(LivenessKitError):
    """Non-finite loss or gradients during training."""

    exit_code = 2
