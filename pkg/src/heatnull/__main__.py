import sys

from heatnull.cli import main

sys.exit(main())
