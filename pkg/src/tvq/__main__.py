import sys

from tvq.cli import main

sys.exit(main())
