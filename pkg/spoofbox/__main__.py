import sys

from spoofbox.cli import main

sys.exit(main())
