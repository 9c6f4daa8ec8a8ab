"""Exception hierarchy.

Every error carries a ``category`` used by the command-line front end to
produce ``ERROR <category>: <detail>`` lines.
"""


class DSGRLError(Exception):
    category = "error"


class ShapeError(DSGRLError, ValueError):
    category = "shape"


class LifecycleError(DSGRLError, RuntimeError):
    category = "lifecycle"


class DegenerateBatchError(DSGRLError, ValueError):
    category = "numeric"


class DegenerateRowError(DSGRLError, ValueError):
    category = "numeric"


class NumericError(DSGRLError, FloatingPointError):
    category = "numeric"


class ParseError(DSGRLError, ValueError):
    category = "parse"

    def __init__(self, detail, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + detail)


class RangeError(DSGRLError, IndexError):
    category = "range"


class ConsistencyError(DSGRLError, ValueError):
    category = "consistency"


class ConfigError(DSGRLError, ValueError):
    category = "config"


class FormatError(DSGRLError, ValueError):
    category = "format"


class ProtocolError(DSGRLError, ValueError):
    category = "protocol"
