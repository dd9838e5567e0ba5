"""Exception hierarchy.

Data problems derive from ``DataError`` (CLI exit 1), configuration problems
from ``ConfigError`` (exit 2), numeric failures from ``NumericError`` (exit 3).
"""


class PersimorphError(Exception):
    exit_code = 1


class DataError(PersimorphError, ValueError):
    exit_code = 1


class ConfigError(PersimorphError, ValueError):
    exit_code = 2


class NumericError(PersimorphError, ArithmeticError):
    exit_code = 3


# --- SWC ingestion -----------------------------------------------------------

class EmptyFile(DataError):
    pass


class MalformedLine(DataError):
    def __init__(self, lineno, reason, line=""):
        self.lineno = lineno
        self.reason = reason
        self.line = line
        super().__init__(f"line {lineno}: {reason}: {line.strip()!r}")


class DuplicateId(DataError):
    def __init__(self, node_id, lineno=None):
        self.node_id = node_id
        self.lineno = lineno
        where = f" (line {lineno})" if lineno is not None else ""
        super().__init__(f"duplicate node id {node_id}{where}")


class NoRoot(DataError):
    pass


class MultipleRoots(DataError):
    def __init__(self, root_ids):
        self.root_ids = tuple(root_ids)
        super().__init__(f"expected one root, found {len(self.root_ids)}: {list(self.root_ids)[:10]}")


class DanglingParent(DataError):
    def __init__(self, node_id, parent_id):
        self.node_id = node_id
        self.parent_id = parent_id
        super().__init__(f"node {node_id} refers to missing parent {parent_id}")


class CycleDetected(DataError):
    def __init__(self, node_ids):
        self.node_ids = tuple(node_ids)
        super().__init__(f"nodes unreachable from root (cycle): {list(self.node_ids)[:10]}")


class EmptyFitSet(DataError):
    pass


# --- filtration / tmd --------------------------------------------------------

class UnknownNode(DataError, KeyError):
    def __init__(self, node_id):
        self.node_id = node_id
        super().__init__(f"unknown node {node_id}")

    def __str__(self):
        return self.args[0]


class FiltrationTreeMismatch(DataError):
    pass


class NotAnAncestor(DataError):
    def __init__(self, leaf_id, death_id):
        self.leaf_id = leaf_id
        self.death_id = death_id
        super().__init__(f"node {death_id} is not an ancestor of {leaf_id}")


class EmptyDiagram(DataError):
    pass


# --- learning ---------------------------------------------------------------

class ShapeMismatch(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class NonFiniteInput(NumericError):
    pass


class NonFiniteLoss(NumericError):
    def __init__(self, step, loss, detail=""):
        self.step = step
        self.loss = loss
        super().__init__(f"non-finite loss {loss} at step {step}{': ' + detail if detail else ''}")


# --- evaluation -------------------------------------------------------------

class EmptyTrainSet(DataError):
    pass


class KTooLarge(DataError):
    pass


class DimMismatch(DataError):
    pass


class EmptyGallery(DataError):
    pass


class LengthMismatch(DataError):
    pass
