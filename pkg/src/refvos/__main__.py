import sys

from refvos.cli import main

sys.exit(main())
