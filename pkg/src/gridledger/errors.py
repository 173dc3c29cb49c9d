"""Exception hierarchy shared across the simulator."""


class GridLedgerError(Exception):
    """Base class for all simulator errors."""


# --- cyber graph -----------------------------------------------------------

class AsymmetricAdjacency(GridLedgerError):
    """Adjacency matrix is not symmetric (the cyber graph is undirected)."""


class DisconnectedGraph(GridLedgerError):
    """Cyber graph is not connected; cooperative control is undefined."""


class NegativeWeight(GridLedgerError):
    """Adjacency entries must be nonnegative."""


class NoStealthVectorExists(GridLedgerError):
    """The attack-distribution matrix has a trivial null space."""


class DimensionMismatch(GridLedgerError):
    """Vector length does not match the agent count."""


# --- electrical network ----------------------------------------------------

class SingularNetwork(GridLedgerError):
    """The resistive network cannot be solved (isolated bus or similar)."""


class NonFiniteState(GridLedgerError):
    """Simulation state left the finite range; the run is aborted."""


# --- ledger ----------------------------------------------------------------

class NonFinitePayload(GridLedgerError):
    """Transaction payload contains NaN or infinity."""


class StaleRound(GridLedgerError):
    """Transaction round does not advance the producer's round counter."""


class EmptyBlock(GridLedgerError):
    """A block must carry at least one transaction."""


# --- attacks ---------------------------------------------------------------

class InvalidZeta(GridLedgerError):
    """Hijack switch must be exactly 0 or 1."""


# --- self-healing ----------------------------------------------------------

class AllNodesCompromised(GridLedgerError):
    """Every agent is flagged; no trustworthy donor remains (the N-1 limit)."""


class NoTrustedSource(GridLedgerError):
    """Neither a donor value nor a last-trusted own value is available."""


# --- predictor -------------------------------------------------------------

class InsufficientHistory(GridLedgerError):
    """Not enough samples buffered for the requested downsampling window."""


# --- scenario files --------------------------------------------------------

class ScenarioError(GridLedgerError):
    """Scenario file failed to parse or validate.

    Carries the offending section/field name where known.
    """

    def __init__(self, message, section=None, field=None):
        self.section = section
        self.field = field
        where = ""
        if section:
            where = f" [{section}]"
            if field:
                where += f".{field}"
        super().__init__(message + where)


class UnknownAttackKind(ScenarioError):
    """Attack spec names a kind the simulator does not implement."""


class DanglingAgentReference(ScenarioError):
    """Scenario references an agent or channel that does not exist."""
