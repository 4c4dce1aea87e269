/**
 * External training loop sketch: a stubbed token generator asks the reward
 * service for a per-token signal and improves with a plain policy-gradient
 * rule. Stands in for a real language model; the point is the client
 * plumbing, not the learner.
 *
 * The stub picks between two candidate tokens per output slot, so early
 * episodes already complete the occasional goal item and the per-token
 * deltas give the credit a direction.
 *
 * Build and run:
 *   npm run build && node dist/examples/train_loop.js
 */
import { connect, RewardClient } from "../src/index";

const GOAL = {
  sv_gt: [["hotel", "stars", "three"]] as [string, string, string][],
  s_gt: [["hotel", "phone"]] as [string, string][],
};

const GOLD = (
  "<sos_b> [hotel] stars three <eos_b> " +
  "<sos_a> [hotel] [offer] [value_name] <eos_a> " +
  "<sos_r> the phone of [value_name] is [value_phone] <eos_r>"
).split(" ");

// one plausible wrong token per slot: bad structure, domains, slots, values
const DISTRACTORS = [
  "hello", "[restaurant]", "area", "two", "okay",
  "right", "[attraction]", "[inform]", "[value_address]", "fine",
  "well", "a", "need", "was", "it", "seems", "[value_postcode]", "thanks",
];

const EPISODES = 600;
const LR = 0.8;

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** One binary preference per output slot: gold candidate vs distractor. */
class StubGenerator {
  logits = GOLD.map(() => 0);

  constructor(private readonly rand: () => number) {}

  probGold(position: number): number {
    return 1 / (1 + Math.exp(-this.logits[position]));
  }

  sample(position: number): number {
    return this.rand() < this.probGold(position) ? 0 : 1;
  }

  token(position: number, choice: number): string {
    return choice === 0 ? GOLD[position] : DISTRACTORS[position];
  }

  /** REINFORCE on the return-to-go of each emitted token. */
  update(choices: number[], deltas: number[], baseline: number): void {
    let toGo = 0;
    const credit = new Array(choices.length).fill(0);
    for (let t = choices.length - 1; t >= 0; t--) {
      toGo += deltas[t];
      credit[t] = toGo;
    }
    for (let t = 0; t < choices.length; t++) {
      const advantage = credit[t] - baseline;
      const goldness = choices[t] === 0 ? 1 : 0;
      this.logits[t] += LR * advantage * (goldness - this.probGold(t));
    }
  }
}

async function episode(
  client: RewardClient,
  gen: StubGenerator,
  id: string,
): Promise<{ choices: number[]; deltas: number[]; total: number }> {
  const session = await client.openSession(id, GOAL);
  const choices: number[] = [];
  const deltas: number[] = [];
  for (let t = 0; t < GOLD.length; t++) {
    const pick = gen.sample(t);
    choices.push(pick);
    const record = await session.step(gen.token(t, pick));
    deltas.push(record.delta);
  }
  const summary = await session.finalize();
  return { choices, deltas, total: summary.cum_tod };
}

async function main(): Promise<void> {
  const python = process.env.TODSTEP_PYTHON ?? "python3";
  const client = await connect([python, "-m", "todstep", "serve", "--stdio"]);
  const gen = new StubGenerator(mulberry32(7));

  let baseline = 0;
  const window: number[] = [];
  for (let ep = 0; ep < EPISODES; ep++) {
    const { choices, deltas, total } = await episode(client, gen, `ep-${ep}`);
    gen.update(choices, deltas, baseline);
    baseline = 0.95 * baseline + 0.05 * total;
    window.push(total);
    if ((ep + 1) % 100 === 0) {
      const mean = window.reduce((a, b) => a + b, 0) / window.length;
      console.log(`episodes ${ep - 98}-${ep + 1}  mean reward ${mean.toFixed(3)}`);
      window.length = 0;
    }
  }

  const greedyTokens = GOLD.map((_, t) => gen.token(t, gen.probGold(t) >= 0.5 ? 0 : 1));
  const session = await client.openSession("greedy", GOAL);
  await session.streamTokens(greedyTokens);
  const summary = await session.finalize();
  console.log(`greedy rollout: ${greedyTokens.join(" ")}`);
  console.log(`greedy reward ${summary.cum_tod.toFixed(3)}  malformed ${summary.malformed}`);
  await client.close();
}

main().catch((err) => {
  console.error(err);
  process.exit(1);
});
