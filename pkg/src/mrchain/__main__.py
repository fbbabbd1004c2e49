from mrchain.cli import main
import sys

sys.exit(main())
