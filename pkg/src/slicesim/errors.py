"""Error taxonomy shared across the framework.

Every domain error derives from SliceSimError.  During a simulation run the
engine converts raised domain errors into trace events instead of aborting;
the same classes double as the event names that appear in traces.
"""


class SliceSimError(Exception):
    """Base class for all domain errors."""


# -- catalog ---------------------------------------------------------------

class SchemaError(SliceSimError):
    """A structured text document does not parse against its grammar."""


class DuplicateSfError(SliceSimError):
    pass


class MissingAttributeError(SliceSimError):
    pass


class InfeasibleGroupingError(SliceSimError):
    pass


class UnassignedSfError(SliceSimError):
    pass


# -- messages --------------------------------------------------------------

class NoInterfaceError(SliceSimError):
    """No reference-point interface is defined for a role pair."""


# -- fabric ----------------------------------------------------------------

class BadRelayError(SliceSimError):
    pass


class ModelMismatchError(SliceSimError):
    pass


class UnknownDestinationError(SliceSimError):
    pass


class NoSubscriberError(SliceSimError):
    """Publish on a topic with zero subscribers.  Never raised: flagged on
    the delivery outcome and traced, since the condition is not fatal."""


# -- building blocks -------------------------------------------------------

class PermissionDenied(SliceSimError):
    pass


class UnknownDevice(SliceSimError):
    pass


class NoDPlaneFunctionError(SliceSimError):
    pass


class NoEligibleSliceError(SliceSimError):
    pass


class NoSessionError(SliceSimError):
    pass


class PolicyForbidsError(SliceSimError):
    pass


class NotIdleError(SliceSimError):
    pass


class NoContextError(SliceSimError):
    pass


class NoPathError(SliceSimError):
    pass


class CapacityError(SliceSimError):
    pass


class AdaptorError(SliceSimError):
    pass


# -- slices ----------------------------------------------------------------

class InfraCapacityError(SliceSimError):
    pass


class LifecycleOrderError(SliceSimError):
    pass


class BlueprintError(SliceSimError):
    pass


# -- netsim / engine -------------------------------------------------------

class IllegalEventError(SliceSimError):
    pass


class ScenarioError(SliceSimError):
    pass


class EquivalenceViolation(SliceSimError):
    """Terminal-state digests diverged across fabric models."""
