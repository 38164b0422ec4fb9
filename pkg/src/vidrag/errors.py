"""Exception hierarchy shared across the engine."""


class VidragError(Exception):
    """Base class for all engine errors."""


# --- vector index ---

class ZeroVector(VidragError):
    """A vector with (near-)zero L2 norm cannot be normalized."""


class DimensionMismatch(VidragError):
    """Vector dimension does not match the index / batch dimension."""


class DuplicateId(VidragError):
    """An entry id is already present in the index."""


class IoFailure(VidragError):
    """Reading or writing a database location failed at the OS level."""


class CorruptManifest(VidragError):
    """A stored index is missing, truncated, or fails its checksum."""


# --- query decoupling ---

class UnparseableReply(VidragError):
    """No JSON object could be recovered from a model reply."""


# --- extractor ports ---

class PortError(VidragError):
    """Base class for extractor-port failures."""


class BackendUnavailable(PortError):
    """The backend could not be reached, or kept failing after retries."""


class MalformedResponse(PortError):
    """The backend replied with bytes that do not validate against the wire schema."""


class NoAudioTrack(PortError):
    """The input has no audio track; the ASR path must be skipped, not failed."""


class ContextOverflow(PortError):
    """The generation backend rejected the prompt as too long."""


# --- pipeline ---

class DecodeFailure(VidragError):
    """The video input could not be decoded or read as a frame source."""


class EmptyDataset(VidragError):
    """A benchmark dataset contains no items."""
