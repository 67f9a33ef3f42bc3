import socket


class PoolManager:
    def __init__(self, num_pools=10):
        self.num_pools = num_pools

    def request(self, method, url, body=None, timeout=30):
        host = url.split("/")[2]
        conn = socket.create_connection((host, 443), timeout)
        conn.sendall(method.encode("ascii") + b" " + url.encode("utf-8") + b"\r\n\r\n")
        if body:
            conn.sendall(body)
        return conn.recv(65536)
