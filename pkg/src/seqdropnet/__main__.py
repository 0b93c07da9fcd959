import sys

from seqdropnet.cli import main

sys.exit(main())
