import { RatingServiceClient } from "./api";
import { ApiError, JudgementResponse, PairAssignment, Side } from "./types";

export interface DisplayedPair {
  assignment: PairAssignment;
  /** item id rendered on each side; randomized per pair to cancel position bias */
  left: string;
  right: string;
}

export interface SessionOptions {
  /** uniform random source, injectable for tests */
  random?: () => number;
  /** delay before the single network retry, ms */
  retryDelayMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

/**
 * One rater's judgement loop: holds at most one active pair, maps a side
 * choice to the winner item id, and guarantees at most one submission per
 * displayed pair (a pair id is marked consumed before its request leaves).
 * Transient network failures are retried once with the identical payload;
 * the pair id lets the server spot duplicates if the first copy did arrive.
 */
export class RaterSession {
  current: DisplayedPair | null = null;
  judgementCount = 0;
  complete = false;
  lastWarning: string | null = null;

  private consumed = new Set<string>();
  private random: () => number;
  private retryDelayMs: number;
  private sleep: (ms: number) => Promise<void>;

  constructor(
    private client: RatingServiceClient,
    public experimentId: string,
    public raterId: string,
    options: SessionOptions = {},
  ) {
    this.random = options.random ?? Math.random;
    this.retryDelayMs = options.retryDelayMs ?? 250;
    this.sleep = options.sleep ?? defaultSleep;
  }

  /** Fetch and stage the next pair; resolves to false when nothing is left. */
  async loadNext(): Promise<boolean> {
    try {
      const assignment = await this.client.nextPair(this.experimentId, this.raterId);
      const swap = this.random() < 0.5;
      this.current = {
        assignment,
        left: swap ? assignment.item_b : assignment.item_a,
        right: swap ? assignment.item_a : assignment.item_b,
      };
      return true;
    } catch (error) {
      if (error instanceof ApiError && error.code === "no_schedulable_pairs") {
        this.complete = true;
        this.current = null;
        return false;
      }
      throw error;
    }
  }

  /** Winner item id for a side choice on the currently displayed pair. */
  winnerFor(side: Side): string {
    if (!this.current) {
      throw new Error("no pair is displayed");
    }
    if (side === "left") return this.current.left;
    if (side === "right") return this.current.right;
    return this.random() < 0.5 ? this.current.left : this.current.right;
  }

  /**
   * Submit the choice for the displayed pair.  The pair is consumed up
   * front, so a second call for the same pair throws instead of double
   * submitting.
   */
  async choose(side: Side): Promise<JudgementResponse> {
    const displayed = this.current;
    if (!displayed) {
      throw new Error("no pair is displayed");
    }
    const pairId = displayed.assignment.pair_id;
    if (this.consumed.has(pairId)) {
      throw new Error(`pair ${pairId} was already submitted`);
    }
    this.consumed.add(pairId);
    const body = {
      pair_id: pairId,
      item_a: displayed.assignment.item_a,
      item_b: displayed.assignment.item_b,
      winner: this.winnerFor(side),
      rater_id: this.raterId,
      client_ts: Date.now(),
    };
    this.current = null;
    try {
      const response = await this.submitWithRetry(body);
      this.judgementCount += 1;
      this.lastWarning = response.warning ?? null;
      return response;
    } catch (error) {
      if (error instanceof ApiError) {
        // domain rejection: the choice is discarded, the loop moves on
        this.lastWarning = error.code;
      }
      throw error;
    }
  }

  private async submitWithRetry(body: {
    pair_id: string;
    item_a: string;
    item_b: string;
    winner: string;
    rater_id: string;
    client_ts: number;
  }): Promise<JudgementResponse> {
    try {
      return await this.client.submitJudgement(this.experimentId, body);
    } catch (error) {
      if (error instanceof ApiError) {
        throw error; // the server answered; do not resend
      }
      await this.sleep(this.retryDelayMs);
      return await this.client.submitJudgement(this.experimentId, body);
    }
  }
}
