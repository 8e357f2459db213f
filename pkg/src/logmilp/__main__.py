"""Allow `python -m logmilp ...` as an alternative to the console script."""

from .cli import entry

entry()
