from setuptools import setup

with open("README.md") as fh:
    long_description = fh.read()

setup(
    name="requests",
    version="2.31.0",
    packages=["requests"],
    install_requires=["urllib3>=1.21.1,<3"],
    long_description=long_description,
)
