"""Exception hierarchy shared by every parser and analysis stage."""


class ForensicError(Exception):
    """Base class for typed parse/analysis errors (CLI exit code 1)."""
