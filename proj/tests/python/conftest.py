import os
import sys

# In a build tree the package sources are not installed; the test harness
# exports their location so `import hs3bench` resolves (the extension itself
# is already on PYTHONPATH).
_pkg_dir = os.environ.get("HS3_PACKAGE_DIR")
if _pkg_dir and _pkg_dir not in sys.path:
    sys.path.insert(0, _pkg_dir)
