import sys

from lowlight_structure.cli import main

sys.exit(main())
