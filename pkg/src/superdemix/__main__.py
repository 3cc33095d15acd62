import sys

from superdemix.cli import main

sys.exit(main())
