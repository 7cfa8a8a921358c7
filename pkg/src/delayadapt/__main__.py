import sys
from delayadapt.cli import main

sys.exit(main())
