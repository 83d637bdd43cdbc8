"""Exception types shared across the toolkit."""


class BpShareError(Exception):
    """Base class for all toolkit errors."""


# --- kinematics / dynamics ---

class OutOfReach(BpShareError):
    """Workspace target outside the reachable annulus."""


class NearSingular(BpShareError):
    """Configuration too close to a kinematic singularity (|det J| below threshold)."""


class NonFiniteState(BpShareError):
    """Integration produced a non-finite state."""


# --- LDI fitting ---

class SingularSample(BpShareError):
    """A fitting sample fell below the singularity threshold."""


class OutsideBox(BpShareError):
    """State queried outside the declared validity box."""


# --- geometry ---

class EquilibriumInsideObstacle(BpShareError):
    """Slab construction requested from a point inside the obstacle."""


# --- synthesis ---

class InvalidScalar(BpShareError):
    """Scalar parameter outside its admissible range."""


class Infeasible(BpShareError):
    """The barrier-pair program admits no solution under the given constraints."""


class SolverFailure(BpShareError):
    """The SDP backend failed for reasons other than proven infeasibility."""


class EmptySampleSet(BpShareError):
    """Certification requested with zero samples."""


# --- graph ---

class EmptyGraph(BpShareError):
    """Operation requires at least one vertex."""


class DegenerateDirection(BpShareError):
    """Projection direction has (near-)zero barrier norm."""


class MaxIterations(BpShareError):
    """Sampling budget exhausted before the graph connected."""


class Disconnected(BpShareError):
    """No path between the requested anchors."""


# --- intent / execution ---

class DegenerateBelief(BpShareError):
    """All posterior mass vanished numerically."""


class SafetyBreach(BpShareError):
    """Active barrier value exceeded its invariance slack."""


# --- gateway ---

class ParseError(BpShareError):
    """File missing or not parseable."""


class ValidationError(BpShareError):
    """Config parsed but failed validation; message carries the field path."""


class IoError(BpShareError):
    """Filesystem read/write failure."""


class FormatVersionMismatch(BpShareError):
    """Persisted file carries an unknown or truncated format."""


class PortInUse(BpShareError):
    """Requested TCP port already bound."""
