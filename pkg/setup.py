"""
Setup file for the bsdelab library
"""

from setuptools import setup

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name='bsdelab',
    version='0.1.0',
    description='Numerical laboratory for BSDEs with linear-growth generators and unbounded terminal values',
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=['bsdelab'],
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    python_requires='>=3.8',
    install_requires=[
        'numpy>=1.22.0',
        'scipy>=1.8.0',
        'prettytable>=3.5.0',
        'inquirer>=3.1.0',
    ],
    extras_require={
        'tests': [
            'pytest>=7.0.0',
            'hypothesis>=6.0.0',
        ],
    },
    entry_points={
        'console_scripts': [
            'bsdelab=bsdelab.cli:main',
        ],
    },
)
