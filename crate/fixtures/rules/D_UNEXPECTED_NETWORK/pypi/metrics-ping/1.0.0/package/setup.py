from setuptools import setup

setup(name="metrics-ping", version="1.0.0", packages=["metrics_ping"])
