/**
 * Wire shapes for the newline-delimited JSON reward protocol.
 *
 * Every request is one JSON object with an "op" field on a single line;
 * every reply is one JSON object on a single line. Failures come back as
 * `{"error": {"code", "message"}}` instead of a result.
 */

export interface TurnGoalWire {
  sv_gt: [string, string, string][];
  s_gt: [string, string][];
}

export interface RewardConfigWire {
  alpha_u?: number;
  alpha_g?: number;
}

export interface StepRecord {
  delta: number;
  cum_u: number;
  cum_g: number;
  cum_tod: number;
  region: string;
}

export interface SessionSummary {
  cum_u: number;
  cum_g: number;
  cum_tod: number;
  n_tokens: number;
  malformed: boolean;
  halted: boolean;
  sv_hat: [string, string, string][];
  s_hat: [string, string][];
}

export interface PingReply {
  ok: boolean;
  version: string;
}

export interface WireError {
  code: string;
  message: string;
}

export type Reply = Record<string, unknown>;

export function encodeLine(value: unknown): string {
  return JSON.stringify(value) + "\n";
}

/** Incremental line reader; invokes the callback once per complete line. */
export function lineSplitter(onLine: (line: string) => void): (chunk: Buffer | string) => void {
  let buffer = "";
  return (chunk) => {
    buffer += chunk.toString();
    for (;;) {
      const idx = buffer.indexOf("\n");
      if (idx === -1) return;
      const line = buffer.slice(0, idx).trim();
      buffer = buffer.slice(idx + 1);
      if (line) onLine(line);
    }
  };
}
