import sys

from rotmarg.cli import main

sys.exit(main())
