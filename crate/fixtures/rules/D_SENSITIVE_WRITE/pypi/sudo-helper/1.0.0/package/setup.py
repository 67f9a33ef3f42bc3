from setuptools import setup

setup(name="sudo-helper", version="1.0.0", packages=["sudo_helper"])
