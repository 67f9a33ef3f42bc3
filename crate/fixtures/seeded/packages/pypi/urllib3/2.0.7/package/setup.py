from setuptools import setup

setup(name="urllib3", version="2.0.7", packages=["urllib3"])
