"""Exception hierarchy shared by all modules.

Every error carries an ``exit_code`` so the command line can map failures to
the documented process exit status without a lookup table per command.
"""


class NetSynthError(Exception):
    exit_code = 3


# -- fact base -------------------------------------------------------------

class FactBaseError(NetSynthError):
    pass


class FactSyntaxError(FactBaseError):
    def __init__(self, line, message="malformed fact line"):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ArityMismatch(FactBaseError):
    def __init__(self, predicate, line, expected=None, got=None):
        detail = f" (expected {expected}, got {got})" if expected is not None else ""
        super().__init__(f"line {line}: arity mismatch for {predicate!r}{detail}")
        self.predicate = predicate
        self.line = line


class ValueOutOfRange(FactBaseError):
    def __init__(self, line=None, value=None, limit=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}integer {value} outside [0, {limit})")
        self.line = line
        self.value = value


class ConflictingFact(FactBaseError):
    def __init__(self, line, fact):
        super().__init__(f"line {line}: {fact} contradicts an earlier fact")
        self.line = line


class InvalidHoleRef(FactBaseError):
    pass


# -- simulation ------------------------------------------------------------

class DisconnectedTopology(NetSynthError):
    exit_code = 4


class NoConvergence(NetSynthError):
    exit_code = 4

    def __init__(self, max_rounds):
        super().__init__(f"BGP did not converge within {max_rounds} rounds")
        self.max_rounds = max_rounds


class IncompleteConfig(NetSynthError):
    def __init__(self, holes):
        super().__init__(f"configuration has {len(holes)} unassigned parameters")
        self.holes = list(holes)


class MalformedFact(NetSynthError):
    pass


class SimulationFailed(NetSynthError):
    exit_code = 4

    def __init__(self, sample_index, cause):
        super().__init__(f"sample {sample_index}: {cause}")
        self.sample_index = sample_index
        self.cause = cause


# -- specification / data --------------------------------------------------

class EmptySpecification(NetSynthError):
    pass


class InsufficientCandidates(NetSynthError):
    def __init__(self, kind, wanted, available):
        super().__init__(f"{kind}: wanted {wanted} facts, only {available} candidates")
        self.kind = kind


class GenerationFailed(NetSynthError):
    def __init__(self, seed, cause=None):
        super().__init__(f"seed {seed}: generation failed ({cause})")
        self.seed = seed


# -- numerics / model ------------------------------------------------------

class ShapeMismatch(NetSynthError):
    pass


class NonFiniteValue(NetSynthError):
    pass


class UnknownPredicate(NetSynthError):
    pass


class NoHoles(NetSynthError):
    pass


class VersionMismatch(NetSynthError):
    pass


class CorruptCheckpoint(NetSynthError):
    pass


class InvariantFailure(NetSynthError):
    exit_code = 5
