import sys
from pathlib import Path

# make the oracle module importable as `oracles` from any test
sys.path.insert(0, str(Path(__file__).parent))
