import re

from setuptools import setup

requirements = []
with open("requirements.txt") as f:
    requirements = f.read().splitlines()

version = ""
with open("pptk/__init__.py") as f:
    version = re.search(r'^__version__\s*=\s*[\'"]([^\'"]*)[\'"]', f.read(), re.MULTILINE).group(1)  # type: ignore

if not version:
    raise RuntimeError("version is not set")

readme = ""
with open("README.md") as f:
    readme = f.read()

extras_require = {
    "test": {
        "pytest",
    },
}

packages = [
    "pptk",
]

setup(
    name="pptk",
    version=version,
    packages=packages,
    license="MIT",
    description="PP-YOLOv2 detector construction kit: graph accounting, reference execution, losses and COCO evaluation",
    long_description=readme,
    long_description_content_type="text/markdown",
    include_package_data=True,
    install_requires=requirements,
    extras_require=extras_require,
    entry_points={"console_scripts": ["pptk = pptk.cli:main"]},
    python_requires=">=3.10.0",
)
