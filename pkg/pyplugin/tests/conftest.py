import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

PLUGIN = ROOT / "pyplugin.py"
GOLDEN = pathlib.Path(__file__).resolve().parent / "golden"
