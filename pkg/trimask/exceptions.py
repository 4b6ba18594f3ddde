class TrimaskError(Exception):
    """
    Base class for every error raised by trimask. ``exit_code`` is the status
    the command line exits with when the error escapes a command.
    """

    exit_code = 3


class InvalidArgument(TrimaskError, ValueError):
    """
    Raised when an operation is called outside its preconditions.
    """

    pass


class SequenceTooLong(InvalidArgument):
    """
    Raised when a layout does not fit in the configured sequence length.
    """

    def __init__(self, required, limit):
        self.required = required
        self.limit = limit
        super().__init__(
            "Sequence needs %d positions but the length is %d" % (required, limit)
        )


class StreamExhausted(InvalidArgument):
    """
    Raised by text packing when the stream runs out before a full sequence.
    ``taken`` is the number of tokens consumed.
    """

    def __init__(self, taken, wanted):
        self.taken = taken
        self.wanted = wanted
        if taken:
            message = "Text stream ended after %d of %d tokens" % (taken, wanted)
        else:
            message = "Cannot pack an empty text stream"
        super().__init__(message)


class NoSupport(TrimaskError, ValueError):
    """
    Raised when a distribution has no support: no corpus member agrees with
    the observed tokens, or every logit in a modality range is -inf.
    """

    pass


class IllPosedFit(TrimaskError, ValueError):
    """
    Raised when the fitting data cannot identify the parameters.
    """

    def __init__(self, message, axis=None):
        self.axis = axis
        super().__init__(message)


class NotFound(TrimaskError, LookupError):
    """
    Raised when no measured point lies within the plateau tolerance.
    """

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class NonFiniteGradient(TrimaskError, FloatingPointError):
    """
    Raised by the optimizer before any update when a gradient is NaN or inf.
    """

    exit_code = 4

    def __init__(self, group):
        self.group = group
        super().__init__("Non-finite gradient in parameter group %r" % group)


class ConvergenceError(TrimaskError, ArithmeticError):
    """
    Raised when a numerical search fails; ``trace`` holds the bracket history.
    """

    exit_code = 4

    def __init__(self, message, trace=None):
        self.trace = list(trace or [])
        super().__init__(message)


class InvalidConfig(TrimaskError, ValueError):
    """
    Raised when an experiment file has unknown keys or malformed values.
    """

    exit_code = 2


class InvalidDenoiserError(TrimaskError, ValueError):
    """
    Raised when a denoiser backend is configured incorrectly.
    """

    exit_code = 2
