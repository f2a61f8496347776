from setuptools import find_packages, setup


with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="shiftauc",
    version="0.1.0",
    description="Biomarker AUC estimation, generalization and benchmarking under covariate shift",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*"]),
    py_modules=["main"],
    install_requires=[
        "pydantic~=2.10.4",
        "loguru~=0.7.3",
        "numpy>=1.26",
        "scipy>=1.11",
        "pandas>=2.1",
    ],
    extras_require={"test": ["pytest~=8.3.5"]},
    classifiers=[
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.12",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.11",
    entry_points={
        "console_scripts": [
            "shiftauc=main:main",
        ],
    },
)
