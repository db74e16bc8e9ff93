import sys

from iotfog.harness.cli import main

sys.exit(main())
