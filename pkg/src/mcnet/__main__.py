"""
Module to support call with :file:`__main__.py`. Used to support the following
call::

    $ python3 -m mcnet ...

"""
import os.path
import sys
from typing import List, Optional

from mcnet import cli


def main(cliargs: Optional[List[str]] = None) -> int:
    """Run the command line with the package importable from a source tree."""
    if __package__ == "":
        path = os.path.dirname(os.path.dirname(__file__))
        sys.path[0:0] = [path]

    return cli.main(cliargs)


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
