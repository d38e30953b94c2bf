"""Allow ``python -m purilab``."""

import sys

from .cli import main

sys.exit(main())
