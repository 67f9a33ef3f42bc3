import urllib.request


def load(url):
    body = urllib.request.urlopen(url)
    exec(body)
