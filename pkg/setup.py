#!/usr/bin/env python3
"""
Setup script for SpoofBox
"""

from setuptools import setup

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [line.strip() for line in fh if line.strip() and not line.startswith("#")]

_ = setup(
    name="spoofbox",
    author="SpoofBox contributors",
    description="SpoofBox: synthetic speech detection with warped-cepstral features",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=["spoofbox"],
    scripts=["spoofbox-cli.py"],
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Multimedia :: Sound/Audio :: Speech",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
    ],
    python_requires=">=3.10",
    install_requires=requirements,
    entry_points={
        "console_scripts": [
            "spoofbox=spoofbox.cli:main",
        ],
    },
    keywords="anti-spoofing speech synthetic-speech countermeasure mfcc gmm eer",
)
