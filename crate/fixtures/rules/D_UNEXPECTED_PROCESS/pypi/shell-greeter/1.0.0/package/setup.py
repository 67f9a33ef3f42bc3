from setuptools import setup

setup(name="shell-greeter", version="1.0.0", packages=["shell_greeter"])
