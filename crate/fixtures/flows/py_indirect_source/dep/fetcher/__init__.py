import urllib.request


def fetch(url):
    body = urllib.request.urlopen(url)
    return body
