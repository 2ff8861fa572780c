"""Exception hierarchy."""


class RegistrationError(Exception):
    """Base class for all library errors."""


class DegenerateConfiguration(RegistrationError):
    pass


class FormatError(RegistrationError):
    pass


class DimsTooSmall(RegistrationError):
    pass


class DimsMismatch(RegistrationError):
    pass


class ConstantVolume(RegistrationError):
    pass


class EmptySurface(RegistrationError):
    pass


class EmptyIndex(RegistrationError):
    pass


class NoValidModel(RegistrationError):
    pass


class AllInvalid(RegistrationError):
    pass


class SpecInfeasible(RegistrationError):
    pass


class StageError(RegistrationError):
    """Wraps a failure inside one pipeline stage; ``stage`` names it (s11, s12, s2)."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
