"""Reward service: newline-delimited JSON protocol over stdio or TCP.

Each request line is one JSON object with an "op" field; each response is
one JSON line.  Sessions wrap a RewardTracker keyed by a caller-chosen
identifier and expire after an idle timeout.  Errors come back as
`{"error": {"code": ..., "message": ...}}` and never stop the service.
"""

from __future__ import annotations

import json
import socketserver
import sys
import threading
import time
from dataclasses import dataclass

from . import __version__
from .errors import TodstepError
from .metrics import DialogueEval, evaluate_corpus
from .reward import RewardConfig, RewardTracker
from .schema import DialogueSchema, EntityDatabase, TurnGoal


@dataclass
class ServiceSession:
    session_id: str
    tracker: RewardTracker
    config: RewardConfig
    created: float
    last_seen: float


def _error(code: str, message: str) -> dict:
    return {"error": {"code": code, "message": message}}


def _parse_goal(raw, schema: DialogueSchema) -> TurnGoal:
    if not isinstance(raw, dict):
        raise ValueError("goal must be an object")
    sv = raw.get("sv_gt", [])
    s = raw.get("s_gt", [])
    triples = set()
    for item in sv:
        d, slot, value = item
        triples.add((str(d), str(slot), str(value)))
    pairs = set()
    for item in s:
        d, slot = item
        pairs.add((str(d), str(slot)))
    goal = TurnGoal(sv_gt=frozenset(triples), s_gt=frozenset(pairs))
    goal.validate(schema)
    return goal


def _parse_reward_config(raw) -> RewardConfig:
    if raw is None:
        return RewardConfig()
    if not isinstance(raw, dict):
        raise ValueError("config must be an object")
    known = {"alpha_u", "alpha_g", "kl_beta_init", "kl_target",
             "kl_update_rate", "kl_clip"}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return RewardConfig(**{k: float(v) for k, v in raw.items()})


class RewardService:
    """Protocol state machine; transport-agnostic and thread-safe."""

    def __init__(
        self,
        db: EntityDatabase,
        idle_timeout: float = 600.0,
        clock=time.monotonic,
    ):
        self.db = db
        self.schema = db.schema
        self.idle_timeout = idle_timeout
        self.clock = clock
        self.sessions: dict[str, ServiceSession] = {}
        self._lock = threading.RLock()

    def _sweep(self, now: float) -> None:
        dead = [
            sid for sid, sess in self.sessions.items()
            if now - sess.last_seen > self.idle_timeout
        ]
        for sid in dead:
            del self.sessions[sid]

    def handle_line(self, line: str) -> str:
        try:
            message = json.loads(line)
            if not isinstance(message, dict):
                raise ValueError("request must be a JSON object")
        except ValueError as exc:
            return json.dumps(_error("bad_request", f"malformed JSON: {exc}"))
        return json.dumps(self.handle_request(message), sort_keys=True)

    def handle_request(self, message: dict) -> dict:
        with self._lock:
            now = self.clock()
            self._sweep(now)
            op = message.get("op")
            handler = {
                "ping": self._op_ping,
                "init_session": self._op_init,
                "step": self._op_step,
                "finalize": self._op_finalize,
                "metrics": self._op_metrics,
            }.get(op)
            if handler is None:
                return _error("unknown_op", f"unknown op {op!r}")
            try:
                return handler(message, now)
            except (TodstepError, ValueError, KeyError, TypeError, AttributeError) as exc:
                return _error("bad_request", str(exc))

    def _op_ping(self, message: dict, now: float) -> dict:
        return {"ok": True, "version": __version__}

    def _get_session(self, message: dict) -> ServiceSession | None:
        sid = message.get("session")
        if not isinstance(sid, str):
            raise ValueError("missing or non-string session id")
        return self.sessions.get(sid)

    def _op_init(self, message: dict, now: float) -> dict:
        sid = message.get("session")
        if not isinstance(sid, str) or not sid:
            raise ValueError("init_session requires a non-empty session id")
        if sid in self.sessions:
            raise ValueError(f"session {sid!r} already live")
        goal = _parse_goal(message.get("goal"), self.schema)
        config = _parse_reward_config(message.get("config"))
        tracker = RewardTracker(goal, self.schema, config)
        self.sessions[sid] = ServiceSession(
            session_id=sid, tracker=tracker, config=config,
            created=now, last_seen=now,
        )
        return {"ok": True, "session": sid}

    def _op_step(self, message: dict, now: float) -> dict:
        sess = self._get_session(message)
        if sess is None:
            return _error("no_session", f"no session {message.get('session')!r}")
        token = message.get("token")
        if not isinstance(token, str):
            raise ValueError("step requires a string token")
        sess.last_seen = now
        record = sess.tracker.step(token)
        return {
            "delta": record.delta_tod,
            "cum_u": record.cum_u,
            "cum_g": record.cum_g,
            "cum_tod": record.cum_tod,
            "region": record.region,
        }

    def _op_finalize(self, message: dict, now: float) -> dict:
        sess = self._get_session(message)
        if sess is None:
            return _error("no_session", f"no session {message.get('session')!r}")
        summary = sess.tracker.finalize()
        del self.sessions[sess.session_id]
        return {
            "cum_u": summary.cum_u,
            "cum_g": summary.cum_g,
            "cum_tod": summary.cum_tod,
            "n_tokens": summary.n_tokens,
            "malformed": summary.malformed,
            "halted": summary.halted,
            "sv_hat": [list(t) for t in sorted(summary.sv_hat)],
            "s_hat": [list(p) for p in sorted(summary.s_hat)],
        }

    def _op_metrics(self, message: dict, now: float) -> dict:
        raw = message.get("corpus")
        if not isinstance(raw, list):
            raise ValueError("metrics requires a corpus list")
        corpus = [DialogueEval.from_dict(item) for item in raw]
        report = evaluate_corpus(corpus, self.db)
        return report.to_dict()


def serve_stdio(service: RewardService, stdin=None, stdout=None) -> None:
    """One response line per request line until EOF."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(service.handle_line(line) + "\n")
        stdout.flush()


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace")
            if not line.strip():
                continue
            out = self.server.service.handle_line(line) + "\n"
            self.wfile.write(out.encode("utf-8"))
            self.wfile.flush()


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


def make_tcp_server(
    service: RewardService, host: str = "127.0.0.1", port: int = 0
) -> _Server:
    """Bound but not yet serving; caller runs serve_forever and shutdown."""
    server = _Server((host, port), _Handler)
    server.service = service
    return server


def serve_tcp(
    service: RewardService,
    host: str = "127.0.0.1",
    port: int = 0,
    announce=None,
) -> None:
    server = make_tcp_server(service, host, port)
    if announce is not None:
        announce(server.server_address)
    try:
        server.serve_forever()
    finally:
        server.server_close()
