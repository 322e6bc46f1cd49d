"""Builds the Rust extension via cargo and installs it as idqn_py._native.

Use `pip install -e . --no-build-isolation` from this directory (cargo and
the workspace sources must be present, so this package only installs from
a source checkout).
"""

import shutil
import subprocess
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

REPO_ROOT = Path(__file__).resolve().parent.parent


class CargoBuildExt(build_ext):
    def build_extension(self, ext):
        subprocess.run(
            ["cargo", "build", "--release", "-p", "idqn-py"],
            cwd=REPO_ROOT,
            check=True,
        )
        built = REPO_ROOT / "target" / "release" / "libidqn_py.so"
        if not built.exists():  # e.g. macOS artifact name
            built = REPO_ROOT / "target" / "release" / "libidqn_py.dylib"
        dest = Path(self.get_ext_fullpath(ext.name))
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(built, dest)


setup(
    ext_modules=[Extension("idqn_py._native", sources=[])],
    cmdclass={"build_ext": CargoBuildExt},
)
