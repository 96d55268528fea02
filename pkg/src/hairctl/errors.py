"""Exception types shared by the pipeline and mapped to CLI exit codes."""


class HairctlError(Exception):
    exit_code = 1


class ValidationError(HairctlError, ValueError):
    """Invalid configuration or argument; ``field`` names the offending entry."""

    exit_code = 2

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class AttachmentError(ValidationError):
    def __init__(self, indices, message):
        self.indices = list(indices)
        super().__init__("strands", f"{message} (strand indices {self.indices[:20]}"
                         + (" ..." if len(self.indices) > 20 else "") + ")")


class SimulationDivergence(HairctlError, RuntimeError):
    exit_code = 3

    def __init__(self, frame, substep):
        self.frame = frame
        self.substep = substep
        super().__init__(f"non-finite state at frame {frame}, substep {substep}")


class FormatError(HairctlError, ValueError):
    """Malformed binary file. ``offset`` is the byte position of the problem."""

    exit_code = 4

    def __init__(self, offset, message):
        self.offset = offset
        super().__init__(f"byte {offset}: {message}")


class BundleError(HairctlError, OSError):
    exit_code = 4


class StageError(HairctlError):
    """Wraps an error raised inside a pipeline stage, keeping its exit code."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        if hasattr(cause, "exit_code"):
            self.exit_code = cause.exit_code
        elif isinstance(cause, OSError):
            self.exit_code = 4
        elif isinstance(cause, (IndexError, ValueError)):
            self.exit_code = 2
        else:
            self.exit_code = 1
        super().__init__(f"[{stage}] {cause}")
