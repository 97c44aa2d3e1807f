import sys
from pathlib import Path

# Let tests import their sibling helper modules (fdcheck, oracles).
sys.path.insert(0, str(Path(__file__).parent))
