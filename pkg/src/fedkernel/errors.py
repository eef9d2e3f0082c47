"""Exception hierarchy shared by every federation component.

Error names double as wire codes: the HTTP layer and the scenario runner
report ``type(err).__name__``, so class names are part of the contract.
"""


class FederationError(Exception):
    """Base class for all errors raised by the federation kernel."""


# --- ledger / registry ------------------------------------------------------

class LedgerNotEmpty(FederationError):
    pass


class Unauthorized(FederationError):
    pass


class InvalidToken(FederationError):
    pass


class SeqConflict(FederationError):
    """Stale per-key sequence number; caller must re-read and retry."""


class ParseError(FederationError):
    pass


# --- identity ----------------------------------------------------------------

class DuplicateCloud(FederationError):
    pass


class UnknownCloud(FederationError):
    pass


class BadCredential(FederationError):
    pass


class Expired(FederationError):
    pass


class UnknownRole(FederationError):
    pass


# --- policy / enforcement ----------------------------------------------------

class MalformedPolicy(FederationError):
    pass


class AuthFailed(FederationError):
    pass


class ObligationFailed(FederationError):
    pass


class UnknownAttribute(FederationError):
    pass


class UnknownService(FederationError):
    pass


# --- masking -------------------------------------------------------------------

class SelectorMiss(FederationError):
    pass


class UnknownToken(FederationError):
    pass


class WrongKey(FederationError):
    pass


# --- anonymization -------------------------------------------------------------

class InfeasibleK(FederationError):
    pass


class NonPositiveEpsilon(FederationError):
    pass


class MissingSensitivity(FederationError):
    pass


# --- secure multi-party computation ---------------------------------------------

class TooFewServers(FederationError):
    pass


class MissingShare(FederationError):
    pass


class DuplicateIndex(FederationError):
    pass


class Overflow(FederationError):
    pass


# --- brokerage -------------------------------------------------------------------

class NoCandidates(FederationError):
    pass


class AdapterFailure(FederationError):
    pass


class CapacityExhausted(FederationError):
    pass


# --- monitoring --------------------------------------------------------------------

class UnknownPolicyVersion(FederationError):
    pass


# --- orchestration -------------------------------------------------------------------

class TooFewFounders(FederationError):
    pass


class MissingPrerequisite(FederationError):
    def __init__(self, cloud_id: str, capability: str):
        super().__init__(f"cloud {cloud_id!r} lacks prerequisite {capability}")
        self.cloud_id = cloud_id
        self.capability = capability


class ConfigurationFailed(FederationError):
    pass


class FederationClosed(FederationError):
    pass


class PolicyInvalid(FederationError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


class InvalidChoice(FederationError):
    pass


class NoGrant(FederationError):
    pass


class InvariantViolation(FederationError):
    pass


class SectionUnavailable(FederationError):
    pass


class DeallocationFailed(FederationError):
    pass


class InvalidCursor(FederationError):
    pass


# --- simulated clouds -----------------------------------------------------------------

class UnknownVm(FederationError):
    pass


class InjectedFault(FederationError):
    pass


class ChannelAlreadyOpen(FederationError):
    pass


class NoChannel(FederationError):
    pass


# --- scenario runner --------------------------------------------------------------------

class AssertionFailed(FederationError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no
