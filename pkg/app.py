import os
import sys

# Lets `python app.py ...` find config and spaace_sim when run from outside the repo root
project_root = os.path.dirname(os.path.abspath(__file__))
if project_root not in sys.path:
    sys.path.insert(0, project_root)

from spaace_sim.cli import main

if __name__ == "__main__":
    sys.exit(main())
