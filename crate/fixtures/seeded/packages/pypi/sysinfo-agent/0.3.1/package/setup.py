from setuptools import setup

setup(name="sysinfo-agent", version="0.3.1", packages=["sysinfo_agent"])
