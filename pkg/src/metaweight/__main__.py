import sys

from metaweight.cli import main

sys.exit(main())
