// Long-poll loop over the session event feed. One in-flight request per
// session; on network trouble the view keeps its data and shows a stale
// badge while retries back off.

import { ConsoleApi, SessionGone } from "./api";
import type { EventRecord } from "./types";

export type PollStatus = "live" | "stale" | "gone";

export interface PollerHooks {
  onEvents: (events: EventRecord[]) => void;
  onStatus: (status: PollStatus) => void;
}

export class EventPoller {
  cursor = 0;
  status: PollStatus = "live";
  private backoffMs = 500;
  private running = false;

  constructor(
    private api: ConsoleApi,
    private sessionId: string,
    private hooks: PollerHooks,
    private waitSeconds = 25,
  ) {}

  /** One poll round; returns the number of events delivered. */
  async step(): Promise<number> {
    try {
      const batch = await this.api.events(this.sessionId, this.cursor, this.waitSeconds);
      this.backoffMs = 500;
      if (this.status !== "live") {
        this.status = "live";
        this.hooks.onStatus("live");
      }
      if (batch.events.length > 0) {
        this.cursor = batch.cursor;
        this.hooks.onEvents(batch.events);
      }
      return batch.events.length;
    } catch (error) {
      if (error instanceof SessionGone) {
        this.status = "gone";
        this.hooks.onStatus("gone");
        this.stop();
        return 0;
      }
      this.status = "stale";
      this.hooks.onStatus("stale");
      await sleep(this.backoffMs);
      this.backoffMs = Math.min(this.backoffMs * 2, 15_000);
      return 0;
    }
  }

  async run(): Promise<void> {
    this.running = true;
    while (this.running) {
      await this.step();
    }
  }

  stop(): void {
    this.running = false;
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
