"""Exception types shared across the package."""


class BesaError(Exception):
    """Base class for all errors raised by besa."""

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self)}


class MeshParseError(BesaError, ValueError):
    """A mesh file could not be parsed.

    ``location`` is a 1-based line number for OBJ files and a byte offset
    for PLY files.
    """

    def __init__(self, message, path=None, location=None):
        self.path = None if path is None else str(path)
        self.location = location
        where = ""
        if path is not None:
            where = f"{path}"
            if location is not None:
                where += f":{location}"
            where += ": "
        super().__init__(where + message)

    def to_dict(self):
        d = super().to_dict()
        d.update(path=self.path, location=self.location)
        return d


class DegenerateFaceError(BesaError, ValueError):
    def __init__(self, face_index, area, time_index=None):
        self.face_index = int(face_index)
        self.area = float(area)
        self.time_index = time_index
        msg = f"face {self.face_index} is degenerate (area {self.area:.3e})"
        if time_index is not None:
            msg += f" at time index {time_index}"
        super().__init__(msg)

    def to_dict(self):
        d = super().to_dict()
        d.update(face_index=self.face_index, area=self.area, time_index=self.time_index)
        return d


class ConnectivityError(BesaError, ValueError):
    """A field or mesh does not match the expected connectivity."""


class DimensionError(BesaError, ValueError):
    """Latent vectors or bases with incompatible sizes."""


class RankDeficiencyError(BesaError, ValueError):
    def __init__(self, message, pairs=()):
        self.pairs = list(pairs)
        super().__init__(message)

    def to_dict(self):
        d = super().to_dict()
        d["pairs"] = [list(p) for p in self.pairs]
        return d


class ConsistencyError(BesaError, ArithmeticError):
    """An internal numerical consistency check failed."""


class SolverError(BesaError, ArithmeticError):
    """A numerical solve did not satisfy its contract.

    ``report`` carries whatever diagnostic object the solver produced
    (an ``OptimizerReport`` or a plain dict).
    """

    def __init__(self, message, report=None, **extra):
        self.report = report
        self.extra = extra
        super().__init__(message)

    def to_dict(self):
        d = super().to_dict()
        rep = self.report
        if rep is not None and hasattr(rep, "to_dict"):
            rep = rep.to_dict()
        d["report"] = rep
        for key, val in self.extra.items():
            if hasattr(val, "tolist"):
                val = val.tolist()
            d[key] = val
        return d
