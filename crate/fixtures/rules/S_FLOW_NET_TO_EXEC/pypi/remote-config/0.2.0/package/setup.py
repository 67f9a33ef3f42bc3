from setuptools import setup

setup(name="remote-config", version="0.2.0", packages=["remote_config"])
