"""Exception hierarchy.

``InputError`` subclasses are problems with files, schemas or configuration
(CLI exit code 2). ``ModelError`` subclasses are raised while building or
running a model (CLI exit code 1).
"""


class AdoptDynError(Exception):
    pass


class InputError(AdoptDynError):
    pass


class ModelError(AdoptDynError):
    pass


class SchemaMismatch(InputError):
    def __init__(self, missing, message=None):
        self.missing = list(missing)
        super().__init__(message or f"schema columns not found: {', '.join(self.missing)}")


class EmptySelection(InputError):
    pass


class UnknownCode(InputError):
    pass


class ConfigError(InputError):
    pass


class ParameterBoundError(ModelError):
    """A CommunityModel failed construction validation."""


class InvariantViolation(ModelError):
    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class NonConvergence(ModelError):
    def __init__(self, message, last=None):
        self.last = last
        super().__init__(message)


class NotApplicable(ModelError):
    pass


class SingularSystem(ModelError):
    pass


class DegenerateData(ModelError):
    pass


class DegenerateProfiles(ModelError):
    pass


class SingleCluster(ModelError):
    pass


class MissingGraph(ModelError):
    pass
