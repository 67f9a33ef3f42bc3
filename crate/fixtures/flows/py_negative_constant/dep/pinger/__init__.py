import urllib.request


def ping(url):
    urllib.request.urlopen(url)
    return "ok = True"
