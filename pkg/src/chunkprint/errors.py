"""Exception hierarchy shared by the planner modules."""


class ChunkPrintError(Exception):
    pass


class MeshError(ChunkPrintError, ValueError):
    """Input geometry cannot be used (parse failure, open surface, bad volume)."""


class MeshParseError(MeshError):
    pass


class NotWatertightError(MeshError):
    def __init__(self, boundary_edges):
        self.boundary_edges = [tuple(int(i) for i in e) for e in boundary_edges]
        shown = ", ".join(str(e) for e in self.boundary_edges[:10])
        more = "" if len(self.boundary_edges) <= 10 else f" (+{len(self.boundary_edges) - 10} more)"
        super().__init__(f"mesh is not watertight; boundary edges: {shown}{more}")


class CutError(ChunkPrintError):
    pass


class CutMissError(CutError):
    """The plane leaves the whole part on one side."""


class DegenerateCutError(CutError):
    """The cut produced a sliver part or a cap that could not be closed."""


class UnknownLeafError(ChunkPrintError, KeyError):
    pass


class InfeasibleError(ChunkPrintError):
    pass


class SearchExhaustedError(ChunkPrintError):
    def __init__(self, message, best_tree=None):
        super().__init__(message)
        self.best_tree = best_tree


class AssignmentError(ChunkPrintError):
    def __init__(self, message, chunk_id=None):
        super().__init__(message)
        self.chunk_id = chunk_id


class SimulationError(ChunkPrintError):
    pass
