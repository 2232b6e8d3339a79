"""Exception hierarchy.

Every error carries a module-qualified ``code`` so the CLI can report
``error[store.checksum]`` style messages and map them to exit codes.
"""


class OpenHError(Exception):
    code = "openh.error"
    # CLI exit status: 1 for domain failures, 2 for environment / I/O.
    exit_status = 1


class SchemaError(OpenHError, ValueError):
    code = "schema.invalid"


class UnknownConfigurationError(SchemaError, KeyError):
    code = "schema.unknown_config"

    def __str__(self):
        return Exception.__str__(self)


class RegistryConflictError(SchemaError):
    code = "schema.registry_conflict"


class KinematicsError(OpenHError, ValueError):
    code = "kinematics.invalid"


class DegenerateRotationError(KinematicsError):
    code = "kinematics.degenerate_rotation"


class CapacityError(KinematicsError):
    code = "kinematics.capacity"


class StatisticsError(OpenHError, ValueError):
    code = "normstats.invalid"


class MixtureError(OpenHError, ValueError):
    code = "mixture.invalid"


class InfeasibleMixtureError(MixtureError):
    code = "mixture.infeasible"


class EvalError(OpenHError, ValueError):
    code = "eval.invalid"


class GeneratorTimeout(EvalError):
    code = "eval.generator_timeout"


class StoreError(OpenHError):
    code = "store.error"


class ContainerReadError(StoreError):
    """A container file cannot be read back; reported as an I/O failure."""

    code = "store.read"
    exit_status = 2


class FormatError(ContainerReadError):
    code = "store.format"


class TruncatedError(ContainerReadError):
    code = "store.truncated"


class UnsupportedVersionError(ContainerReadError):
    code = "store.version"


class ChecksumError(ContainerReadError):
    code = "store.checksum"

    def __init__(self, message, expected=None, actual=None, region=None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual
        self.region = region


class UnsupportedConversionError(StoreError):
    code = "store.unsupported_conversion"
