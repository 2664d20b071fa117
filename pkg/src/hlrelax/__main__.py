import sys

from hlrelax.cli import main

sys.exit(main())
