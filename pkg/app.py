#!/usr/bin/env python3
import sys

from bidiag_update.cli import main


sys.exit(main())
