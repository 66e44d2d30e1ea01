"""Allow ``python -m spad_gesture``."""

import sys

from .cli import main

sys.exit(main())
