# -*- coding: utf-8 -*-

import os.path

import setuptools


def readme():
    """Load README contents."""
    path = os.path.join(os.path.dirname(__file__), "README.md")
    with open(path, encoding="utf-8") as readme:
        return readme.read()


def install_requires():
    """Determine installation requirements."""
    return [
        "docopt>=0.6.2",
        "Flask>=3.1",
        "numpy>=2.2",
        "pandas>=2.2",
        "python-dotenv>=1.2",
        "requests>=2.34.2",
        "scipy>=1.14",
        "tomli>=2.0; python_version < '3.11'",
    ]


setuptools.setup(
    name="marlcredit",
    version="0.1.0",
    description=("Centralized-training multi-agent reinforcement learning "
                 "with language-model credit assignment."),
    long_description=readme(),
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=["tests"]),
    package_data={"marlcredit": ["prompts/v1/*.txt"]},
    python_requires=">=3.10",
    install_requires=install_requires(),
    entry_points={
        "console_scripts": [
            "marlcredit=marlcredit.cli:main",
        ],
    },
    extras_require={
        "development": [
            "pylint",
        ],
        "test": [
            "hypothesis",
            "mock>=5.2.0",
            "pytest>=8.4.2",
            "pytest-timeout",
        ],
    },
    license="MIT License",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Programming Language :: Python :: Implementation :: CPython",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
)
