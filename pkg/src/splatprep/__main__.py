import sys

from splatprep.cli import main

sys.exit(main())
