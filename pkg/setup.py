"""ncedfpy."""
from setuptools import setup

with open("README.md", "r") as fh:
    long_description = fh.read()

setup(
    name="ncedfpy",
    description="ncedfpy",
    version="0.1.0",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=["ncedfpy", "ncedfpy.cli_cedf"],
    package_data={"ncedfpy": ["configs/*.json"]},
    python_requires=">=3.7",
    install_requires=["numpy>=1.17", "tabulate>=0.8.2"],
    entry_points={
        "console_scripts": [
            # cli_cedf
            "cedf-gen-data = ncedfpy.cli_cedf.gen_data:main",
            "cedf-train = ncedfpy.cli_cedf.train:main",
            "cedf-eval = ncedfpy.cli_cedf.evaluate:main",
            "cedf-plan = ncedfpy.cli_cedf.plan:main",
            "cedf-bench = ncedfpy.cli_cedf.bench:main",
            "cedf-train-grid = ncedfpy.cli_cedf.train_grid:main",
        ]
    },
    test_suite="ncedfpy.test",
)
