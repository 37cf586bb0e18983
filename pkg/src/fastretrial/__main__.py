import sys

from fastretrial.cli import main

sys.exit(main())
