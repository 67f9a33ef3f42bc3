from pinger import ping


def boot(url):
    status = ping(url)
    exec(status)
