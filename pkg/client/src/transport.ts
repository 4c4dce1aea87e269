import { spawn, ChildProcess } from "child_process";
import * as net from "net";
import { encodeLine, lineSplitter, Reply } from "./protocol";

export class ClientError extends Error {}

/** The endpoint could not be reached or the channel died underneath us. */
export class ConnectionError extends ClientError {
  constructor(readonly endpoint: string, message: string) {
    super(`${message} (endpoint: ${endpoint})`);
  }
}

/** An error object returned by the service, surfaced as an exception. */
export class ServerError extends ClientError {
  constructor(readonly code: string, message: string) {
    super(`${code}: ${message}`);
  }
}

export interface Transport {
  request(message: object): Promise<Reply>;
  close(): Promise<void>;
}

interface Pending {
  resolve: (reply: Reply) => void;
  reject: (err: Error) => void;
}

/**
 * FIFO request/reply matching over a line stream.
 *
 * The service answers strictly in order, one line per request, so the
 * oldest pending promise always owns the next line.
 */
class LineChannel {
  private pending: Pending[] = [];
  private closed: Error | null = null;

  constructor(
    private readonly label: string,
    private readonly write: (data: string) => void,
  ) {}

  feed = lineSplitter((line) => {
    const next = this.pending.shift();
    if (!next) return;
    try {
      next.resolve(JSON.parse(line) as Reply);
    } catch {
      next.reject(new ConnectionError(this.label, `unparseable reply: ${line}`));
    }
  });

  request(message: object): Promise<Reply> {
    if (this.closed) return Promise.reject(this.closed);
    return new Promise((resolve, reject) => {
      this.pending.push({ resolve, reject });
      try {
        this.write(encodeLine(message));
      } catch (err) {
        this.pending.pop();
        reject(new ConnectionError(this.label, String(err)));
      }
    });
  }

  fail(err: Error): void {
    if (this.closed) return;
    this.closed = err;
    const waiting = this.pending;
    this.pending = [];
    for (const p of waiting) p.reject(err);
  }
}

/** Talks to an engine spawned as a child process serving on stdio. */
export class SubprocessTransport implements Transport {
  private readonly child: ChildProcess;
  private readonly channel: LineChannel;
  private exited = false;

  constructor(command: string[]) {
    const label = command.join(" ");
    this.child = spawn(command[0], command.slice(1), {
      stdio: ["pipe", "pipe", "inherit"],
    });
    this.channel = new LineChannel(label, (data) => {
      this.child.stdin!.write(data);
    });
    this.child.stdout!.on("data", this.channel.feed);
    this.child.on("error", (err) => {
      this.exited = true;
      this.channel.fail(new ConnectionError(label, err.message));
    });
    this.child.on("exit", (code) => {
      this.exited = true;
      this.channel.fail(new ConnectionError(label, `service exited with code ${code}`));
    });
  }

  request(message: object): Promise<Reply> {
    return this.channel.request(message);
  }

  async close(): Promise<void> {
    if (this.exited) return;
    // EOF on stdin shuts the serve loop down cleanly
    this.child.stdin?.end();
    await new Promise<void>((resolve) => {
      if (this.exited) return resolve();
      this.child.once("exit", () => resolve());
      this.child.once("error", () => resolve());
    });
  }
}

/** Talks to an engine already listening on a TCP port. */
export class TcpTransport implements Transport {
  private readonly channel: LineChannel;
  private closing = false;

  private constructor(private readonly socket: net.Socket, label: string) {
    this.channel = new LineChannel(label, (data) => {
      socket.write(data);
    });
    socket.on("data", this.channel.feed);
    socket.on("error", (err) => this.channel.fail(new ConnectionError(label, err.message)));
    socket.on("close", () => this.channel.fail(new ConnectionError(label, "connection closed")));
  }

  static async open(host: string, port: number): Promise<TcpTransport> {
    const label = `${host}:${port}`;
    const socket = await new Promise<net.Socket>((resolve, reject) => {
      const s = net.createConnection({ host, port }, () => resolve(s));
      s.once("error", (err) => reject(new ConnectionError(label, err.message)));
    });
    socket.removeAllListeners("error");
    return new TcpTransport(socket, label);
  }

  request(message: object): Promise<Reply> {
    return this.channel.request(message);
  }

  async close(): Promise<void> {
    if (this.closing || this.socket.destroyed) return;
    this.closing = true;
    await new Promise<void>((resolve) => {
      this.socket.once("close", () => resolve());
      this.socket.end();
    });
  }
}
