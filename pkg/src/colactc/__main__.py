import sys

from colactc.cli import main

sys.exit(main())
