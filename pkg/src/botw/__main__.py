import sys

from botw.cli import main

sys.exit(main())
