"""Reliable ordered byte streams: sockets and an in-memory pipe."""
from __future__ import annotations

import socket
import threading
import time


class TransportClosed(ConnectionError):
    pass


class SocketTransport:
    def __init__(self, sock: socket.socket):
        self.sock = sock

    def send(self, data: bytes):
        try:
            self.sock.sendall(data)
        except OSError as e:
            raise TransportClosed(str(e)) from e

    def recv_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(n - len(buf))
            except socket.timeout as e:
                raise TransportClosed(f"timed out waiting for {n - len(buf)} bytes") from e
            except OSError as e:
                raise TransportClosed(str(e)) from e
            if not chunk:
                raise TransportClosed(f"peer closed the stream with {n - len(buf)} bytes outstanding")
            buf += chunk
        return bytes(buf)

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def socket_pair() -> tuple[SocketTransport, SocketTransport]:
    a, b = socket.socketpair()
    return SocketTransport(a), SocketTransport(b)


class _Channel:
    def __init__(self):
        self.buf = bytearray()
        self.closed = False
        self.cond = threading.Condition()


class PipeTransport:
    """One end of an in-process duplex pipe (see ``pipe_pair``)."""

    def __init__(self, inbox: _Channel, outbox: _Channel, timeout: float | None = 60.0):
        self.inbox, self.outbox, self.timeout = inbox, outbox, timeout

    def send(self, data: bytes):
        with self.outbox.cond:
            if self.outbox.closed:
                raise TransportClosed("pipe closed")
            self.outbox.buf += data
            self.outbox.cond.notify_all()

    def recv_exact(self, n: int) -> bytes:
        with self.inbox.cond:
            ok = self.inbox.cond.wait_for(lambda: len(self.inbox.buf) >= n or self.inbox.closed,
                                          self.timeout)
            if len(self.inbox.buf) < n:
                raise TransportClosed("pipe closed" if ok else "timed out on pipe")
            out = bytes(self.inbox.buf[:n])
            del self.inbox.buf[:n]
            return out

    def close(self):
        for ch in (self.inbox, self.outbox):
            with ch.cond:
                ch.closed = True
                ch.cond.notify_all()


def pipe_pair(timeout: float | None = 60.0) -> tuple[PipeTransport, PipeTransport]:
    a_to_b, b_to_a = _Channel(), _Channel()
    return PipeTransport(b_to_a, a_to_b, timeout), PipeTransport(a_to_b, b_to_a, timeout)


def parse_address(addr: str) -> tuple[str, int]:
    """``host:port`` (host defaults to 127.0.0.1 when only ``:port`` or ``port`` is given)."""
    host, _, port = addr.rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise ValueError(f"bad address {addr!r}; expected host:port") from None


def listen(addr: str, timeout: float | None = 60.0, on_bound=None) -> SocketTransport:
    """Accept a single peer on ``addr``. ``on_bound(port)`` fires once the socket is listening."""
    host, port = parse_address(addr)
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        srv.bind((host, port))
    except OSError as e:
        srv.close()
        raise TransportClosed(f"cannot listen on {host}:{port}: {e.strerror or e}") from e
    srv.listen(1)
    srv.settimeout(timeout)
    if on_bound is not None:
        on_bound(srv.getsockname()[1])
    try:
        conn, _ = srv.accept()
    except socket.timeout as e:
        raise TransportClosed(f"no peer connected to {host}:{port} within {timeout}s") from e
    finally:
        srv.close()
    conn.settimeout(timeout)
    return SocketTransport(conn)


def connect(addr: str, timeout: float | None = 60.0, retry_for: float = 10.0) -> SocketTransport:
    """Connect to ``addr``, retrying while the listener is not up yet."""

    host, port = parse_address(addr)
    deadline = time.monotonic() + retry_for
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            sock.settimeout(timeout)
            return SocketTransport(sock)
        except OSError as e:
            if time.monotonic() >= deadline:
                raise TransportClosed(f"cannot connect to {host}:{port}: {e.strerror or e}") from e
            time.sleep(0.1)
