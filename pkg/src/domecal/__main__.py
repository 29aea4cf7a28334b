"""Allow ``python -m domecal``."""
import sys

from .cli import main

sys.exit(main())
