import sys

from distqn.harness.cli import main

sys.exit(main())
