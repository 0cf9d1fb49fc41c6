"""
Controller-in-the-loop co-simulation over TCP.

A plant simulator connects, and for every controller sampling instant sends
one line and reads one line back:

    STEP <t> <x_ref> <x>      ->  REF <x_ref_mod>
    RESET                     ->  OK
    PARAMS <key>=<value> ...  ->  OK
    BYE                       ->  BYE   (connection closes)

Anything else gets ``ERR <reason>`` and the session continues. Numbers are
written in shortest round-trip form so a remote run reproduces an in-process
run bit for bit. Every connection owns its own modulator.
"""
import asyncio
import logging
import math
import socket
import threading
from contextlib import contextmanager
from typing import Iterator, List, Optional, Tuple

from config import COSIM_HOST, COSIM_PORT
from .config_file import parse_overrides
from .core import ConfigError, ControllerParams, SpaaceError, format_number, validate
from .modulator import Modulator

MALFORMED = "malformed frame"
FRAME_LIMIT = 64 * 1024


class CosimProtocolError(SpaaceError):
    """The peer answered with ERR or with an unexpected frame."""


class CosimSession:
    """Protocol state of one connection."""

    def __init__(self, params: ControllerParams):
        self.modulator = Modulator(params)
        self.frames = 0
        self.errors = 0

    @property
    def params(self) -> ControllerParams:
        return self.modulator.params

    def handle(self, line: str) -> Tuple[str, bool]:
        """
        Answers one request line.

        Returns:
            Tuple[str, bool]: The response frame (no terminator) and whether
            the session stays open.
        """
        self.frames += 1
        fields = line.split()
        if not fields:
            return self._error(MALFORMED)
        verb, args = fields[0].upper(), fields[1:]

        if verb == "STEP":
            if len(args) != 3:
                return self._error(MALFORMED)
            try:
                t, x_ref, x = (float(a) for a in args)
            except ValueError:
                return self._error(MALFORMED)
            if not all(math.isfinite(v) for v in (t, x_ref, x)):
                return self._error(MALFORMED)
            try:
                return f"REF {format_number(self.modulator.step(x_ref, x, t))}", True
            except SpaaceError as e:
                return self._error(str(e))
        if verb == "RESET" and not args:
            self.modulator.reset()
            return "OK", True
        if verb == "PARAMS" and args:
            return self._update_params(args)
        if verb == "BYE" and not args:
            return "BYE", False
        return self._error(MALFORMED)

    def reject_oversized(self) -> Tuple[str, bool]:
        """Answers a frame the server discarded for exceeding FRAME_LIMIT."""
        self.frames += 1
        return self._error(MALFORMED)

    def _update_params(self, items: List[str]) -> Tuple[str, bool]:
        try:
            routed = parse_overrides(items)
            if routed["plant"] or routed["scenario"]:
                keys = sorted(set(routed["plant"]) | set(routed["scenario"]))
                raise ConfigError([f"not a controller parameter: {key}" for key in keys])
            merged = {**self.params.model_dump(), **routed["controller"]}
            violations = validate(merged)
            if violations:
                raise ConfigError(violations)
            self.modulator.update_params(self.params.with_overrides(**routed["controller"]))
        except ConfigError as e:
            return self._error(str(e))
        logging.info(f"Session params updated: {' '.join(items)}")
        return "OK", True

    def _error(self, reason: str) -> Tuple[str, bool]:
        self.errors += 1
        return f"ERR {reason}", True


class CosimServer:
    """asyncio line server; sessions run concurrently, each strictly in lockstep."""

    def __init__(self, params: ControllerParams, host: str = COSIM_HOST, port: int = COSIM_PORT):
        self.params = params
        self.host = host
        self.port = port
        self.sessions = 0
        self.frame_errors = 0
        self._server: Optional[asyncio.AbstractServer] = None

    async def start(self) -> int:
        """Binds the listening socket; raises OSError if the port is taken."""
        self._server = await asyncio.start_server(self._handle, self.host, self.port, limit=FRAME_LIMIT)
        self.port = self._server.sockets[0].getsockname()[1]
        logging.info(f"Co-simulation server listening on {self.host}:{self.port} "
                     f"(mode={self.params.mode.value}, t_sample={self.params.t_sample}, n={self.params.n})")
        return self.port

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    def close(self) -> None:
        if self._server is not None:
            self._server.close()

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        self.sessions += 1
        session_id = self.sessions
        peer = writer.get_extra_info("peername")
        session = CosimSession(self.params)
        logging.info(f"Session {session_id} opened from {peer}")
        try:
            while True:
                raw = await _read_frame(reader)
                if raw is None:
                    reply, keep_open = session.reject_oversized()
                elif not raw:
                    break
                else:
                    reply, keep_open = session.handle(raw.decode("utf-8", errors="replace"))
                writer.write((reply + "\n").encode("utf-8"))
                await writer.drain()
                if not keep_open:
                    break
        except ConnectionError as e:
            logging.warning(f"Session {session_id} dropped: {e}")
        finally:
            self.frame_errors += session.errors
            writer.close()
            try:
                await writer.wait_closed()
            except OSError:
                pass
            logging.info(f"Session {session_id} closed after {session.frames} frames ({session.errors} errors)")


async def _read_frame(reader: asyncio.StreamReader) -> Optional[bytes]:
    """Next LF-terminated frame (b"" at EOF), or None once an over-long frame has been skipped."""
    try:
        return await reader.readuntil(b"\n")
    except asyncio.IncompleteReadError as e:
        return e.partial
    except asyncio.LimitOverrunError as e:
        consumed = e.consumed
    while True:
        await reader.readexactly(consumed)
        try:
            await reader.readuntil(b"\n")
            return None
        except asyncio.IncompleteReadError:
            return None
        except asyncio.LimitOverrunError as e:
            consumed = e.consumed


@contextmanager
def running_server(params: ControllerParams, host: str = "127.0.0.1", port: int = 0) -> Iterator[CosimServer]:
    """Runs a CosimServer on a background event loop; port 0 picks a free port."""
    loop = asyncio.new_event_loop()
    server = CosimServer(params, host, port)
    loop.run_until_complete(server.start())
    thread = threading.Thread(target=loop.run_forever, name="cosim-server", daemon=True)
    thread.start()
    try:
        yield server
    finally:
        loop.call_soon_threadsafe(server.close)
        loop.call_soon_threadsafe(loop.stop)
        thread.join(timeout=5)
        pending = asyncio.all_tasks(loop)
        for task in pending:
            task.cancel()
        if pending:
            loop.run_until_complete(asyncio.gather(*pending, return_exceptions=True))
        loop.close()


class CosimClient:
    """
    Blocking client. Its ``step`` mirrors Modulator.step, so it can stand in
    for the in-process modulator in scenario.run.
    """

    def __init__(self, host: str = COSIM_HOST, port: int = COSIM_PORT, timeout: float = 10.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._reader = self._sock.makefile("r", encoding="utf-8", newline="\n")

    def request(self, line: str) -> str:
        self._sock.sendall((line + "\n").encode("utf-8"))
        reply = self._reader.readline()
        if not reply:
            raise CosimProtocolError("server closed the connection")
        return reply.rstrip("\n")

    def step(self, x_ref: float, x: float, t: Optional[float] = None) -> float:
        if t is None:
            raise CosimProtocolError("STEP frames need a sampling time")
        reply = self.request(f"STEP {format_number(t)} {format_number(x_ref)} {format_number(x)}")
        verb, _, value = reply.partition(" ")
        if verb != "REF":
            raise CosimProtocolError(f"unexpected reply to STEP: {reply}")
        return float(value)

    def reset(self) -> None:
        self._expect_ok(self.request("RESET"))

    def set_params(self, **overrides) -> None:
        items = " ".join(f"{key}={value}" for key, value in overrides.items())
        self._expect_ok(self.request(f"PARAMS {items}"))

    @staticmethod
    def _expect_ok(reply: str) -> None:
        if reply != "OK":
            raise CosimProtocolError(reply)

    def close(self) -> None:
        try:
            self.request("BYE")
        except (OSError, CosimProtocolError):
            pass
        finally:
            self._reader.close()
            self._sock.close()

    def __enter__(self) -> "CosimClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
