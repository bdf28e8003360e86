"""Exception taxonomy shared across the pipeline.

Grouped by how the CLI maps them to exit codes: input/format problems
exit 2, internal invariant violations exit 3.
"""


class KeysigError(Exception):
    """Base class for all errors raised by this package."""


class InputError(KeysigError):
    """A problem with user-supplied files or metadata (CLI exit 2)."""


class VolumeFormatError(InputError):
    """Unsupported or unrecognized volume file format/datatype."""


class VolumeCorruptError(InputError):
    """Header and payload disagree (e.g. truncated data section)."""


class SidecarMissingError(InputError):
    """Raw volume given without its JSON sidecar."""


class MetadataError(InputError):
    """Inconsistent dataset metadata (e.g. subject id reused across databases)."""


class ConsistencyError(InputError):
    """Two inputs that must describe the same dataset do not."""


class MalformedDecisionError(InputError):
    """A decisions JSONL line could not be parsed."""

    def __init__(self, line_number: int, reason: str):
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"decisions line {line_number}: {reason}")


class KsigFormatError(InputError):
    """A .ksig file failed magic/version/layout validation."""


class DegenerateOrientationError(KeysigError):
    """No stable orientation frame exists (flat local neighborhood)."""


class EmptySupportError(KeysigError):
    """Descriptor sample window lies entirely outside the volume."""


class UndefinedScoreError(KeysigError):
    """Pair score requested for an empty keypoint set."""


class InternalInvariantError(KeysigError):
    """A hard invariant of the pipeline was violated (CLI exit 3)."""
