"""Visual grounding diagnostics: attention dumps, grounding metrics, head triage."""

from ._core import *  # noqa: F401,F403
from ._core import (
    AttentionStack,
    VgkitError,
    load_dump,
    run_cli,
    save_dump,
)

__all__ = [name for name in dir() if not name.startswith("_")]


def main(argv=None):
    import sys

    code, out, err = run_cli(list(sys.argv[1:] if argv is None else argv))
    sys.stdout.write(out)
    sys.stderr.write(err)
    return code
