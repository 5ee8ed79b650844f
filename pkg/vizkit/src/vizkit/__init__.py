"""vizkit: renders hypepull artifact files (JSON/CSV) into figures.

Consumes only the documented artifact schemas; no in-process coupling to
the library that produced them.
"""

__version__ = "0.1.0"
