from setuptools import setup

setup(name="host-facts", version="1.0.0", packages=["host_facts"])
