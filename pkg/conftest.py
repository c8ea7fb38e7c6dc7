import sys
from pathlib import Path

# top-level scripts (config.py, specnet_controller.py) import as plain modules
sys.path.insert(0, str(Path(__file__).parent))
