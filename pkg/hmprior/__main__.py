import sys

from hmprior.cli import main

sys.exit(main())
