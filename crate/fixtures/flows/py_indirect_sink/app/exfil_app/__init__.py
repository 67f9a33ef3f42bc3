from netpost import upload


def run(path):
    handle = open(path)
    upload(handle)
