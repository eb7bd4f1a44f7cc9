"""Exception types shared across the pipeline.

The CLI maps :class:`ConvergenceError` to exit status 2 and every other
subclass of :class:`EnsoConflictError` to exit status 1.
"""


class EnsoConflictError(Exception):
    pass


class InputError(EnsoConflictError, ValueError):
    """Invalid input data; ``row`` is the 1-based CSV line number when known."""

    def __init__(self, message: str, row: int | None = None, path: str | None = None):
        self.row = row
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class MissingOniError(EnsoConflictError, KeyError):
    def __init__(self, year: int):
        self.year = year
        super().__init__(year)

    def __str__(self) -> str:
        return f"no December ONI for ENSO year {self.year}"


class ConvergenceError(EnsoConflictError, RuntimeError):
    pass


class CollinearityError(EnsoConflictError, ValueError):
    def __init__(self, columns: list[str]):
        self.columns = list(columns)
        super().__init__(
            "regressors are collinear after fixed-effect absorption: " + ", ".join(self.columns)
        )


class SpecError(EnsoConflictError, ValueError):
    pass
