import sys

from optloss.cli import main

sys.exit(main())
