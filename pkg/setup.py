# Copyright (C) 2024 The pocketforge authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
# http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
# implied.
# See the License for the specific language governing permissions and
# limitations under the License.
#
from pathlib import Path
from setuptools import setup, find_packages

this_directory = Path(__file__).parent
long_description = (this_directory / "README.md").read_text()

requirements_path = this_directory / "requirements.txt"
with open(requirements_path, "r") as file:
    requirements = file.read().splitlines()

setup(
    author="The pocketforge authors",
    description="""
        pocketforge: generative point-cloud completion. A dual-encoder
        autoencoder whose hypernetwork decoder emits the weights of a small
        target network, with prior sampling, latent adaptation to geometric
        constraints and generative evaluation metrics.
    """,
    long_description=long_description,
    long_description_content_type="text/markdown",
    license="Apache Software License",
    name="pocketforge",
    version="0.1.0",
    packages=find_packages(exclude=("tests",)),
    install_requires=requirements,
    extras_require={"dev": ["pytest>=8.0", "pytest-cov>=4.1"]},
    entry_points={
        "console_scripts": ["pocketforge = pocketforge.__main__:main"],
    },
    python_requires=">=3.9",
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: Apache Software License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
)
