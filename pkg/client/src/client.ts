import {
  PingReply,
  Reply,
  RewardConfigWire,
  SessionSummary,
  StepRecord,
  TurnGoalWire,
  WireError,
} from "./protocol";
import { ServerError, SubprocessTransport, TcpTransport, Transport } from "./transport";

/** Either an argv to spawn (stdio mode) or a TCP address. */
export type Endpoint = string[] | { host: string; port: number };

function unwrap<T>(reply: Reply): T {
  const err = reply["error"] as WireError | undefined;
  if (err) throw new ServerError(err.code, err.message);
  return reply as unknown as T;
}

export class RewardClient {
  constructor(readonly transport: Transport) {}

  async ping(): Promise<PingReply> {
    return unwrap<PingReply>(await this.transport.request({ op: "ping" }));
  }

  async openSession(
    id: string,
    goal: TurnGoalWire,
    config?: RewardConfigWire,
  ): Promise<RewardSession> {
    const message: Record<string, unknown> = { op: "init_session", session: id, goal };
    if (config !== undefined) message["config"] = config;
    unwrap(await this.transport.request(message));
    return new RewardSession(this.transport, id);
  }

  /** Score dialogue evaluation documents server-side; returns the report. */
  async evaluateCorpus(corpus: unknown[]): Promise<Reply> {
    return unwrap<Reply>(await this.transport.request({ op: "metrics", corpus }));
  }

  close(): Promise<void> {
    return this.transport.close();
  }
}

/**
 * One reward stream on the server.
 *
 * Not shareable across concurrent callers: keep one in-flight request at
 * a time and open one session per concurrent episode. All reward math
 * happens server-side; this class only transports the numbers.
 */
export class RewardSession {
  /** Cumulative values mirrored from the last server response. */
  cum_u = 0;
  cum_g = 0;
  cum_tod = 0;

  constructor(private readonly transport: Transport, readonly id: string) {}

  async step(token: string): Promise<StepRecord> {
    const record = unwrap<StepRecord>(
      await this.transport.request({ op: "step", session: this.id, token }),
    );
    this.cum_u = record.cum_u;
    this.cum_g = record.cum_g;
    this.cum_tod = record.cum_tod;
    return record;
  }

  /** One step request per token, in order; empty input gives an empty list. */
  async streamTokens(tokens: Iterable<string>): Promise<StepRecord[]> {
    const records: StepRecord[] = [];
    for (const token of tokens) {
      records.push(await this.step(token));
    }
    return records;
  }

  async finalize(): Promise<SessionSummary> {
    return unwrap<SessionSummary>(
      await this.transport.request({ op: "finalize", session: this.id }),
    );
  }
}

/** Open a transport and handshake with a ping. */
export async function connect(endpoint: Endpoint): Promise<RewardClient> {
  const transport = Array.isArray(endpoint)
    ? new SubprocessTransport(endpoint)
    : await TcpTransport.open(endpoint.host, endpoint.port);
  const client = new RewardClient(transport);
  try {
    await client.ping();
  } catch (err) {
    await transport.close().catch(() => undefined);
    throw err;
  }
  return client;
}
