import sys

from cdga.cli import main

sys.exit(main())
