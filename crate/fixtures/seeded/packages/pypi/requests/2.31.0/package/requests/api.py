import urllib3

_pool = urllib3.PoolManager()


def request(method, url, **kwargs):
    return _pool.request(method, url, **kwargs)


def get(url, **kwargs):
    return request("GET", url, **kwargs)


def post(url, data=None, **kwargs):
    return request("POST", url, body=data, **kwargs)
