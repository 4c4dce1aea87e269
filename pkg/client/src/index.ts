export { encodeLine, lineSplitter } from "./protocol";
export type {
  PingReply,
  Reply,
  RewardConfigWire,
  SessionSummary,
  StepRecord,
  TurnGoalWire,
  WireError,
} from "./protocol";
export {
  ClientError,
  ConnectionError,
  ServerError,
  SubprocessTransport,
  TcpTransport,
} from "./transport";
export type { Transport } from "./transport";
export { connect, RewardClient, RewardSession } from "./client";
export type { Endpoint } from "./client";
