/**
 * Queue-driven review flow: one card at a time, keyboard-first.
 *
 * K keeps the current bundle; D arms discard, then 2/3/4 picks the reason
 * (Escape cancels). A server rejection keeps the card on screen with the
 * error surfaced; a network failure re-queues the decision locally behind
 * a retry banner and the view advances once the flush succeeds. All truth
 * lives in the service; reloading restarts from /queue.
 */

import { ApiClient, ApiError, BundleView, Summary, Verdict } from "./api";

export const DISCARD_REASONS: Record<string, number> = { "2": 2, "3": 3, "4": 4 };

export interface PendingDecision {
  bundle_id: string;
  verdict: Verdict;
  reason_code?: number;
}

export interface ReviewState {
  current: BundleView | null;
  queuedIds: string[];
  awaitingReason: boolean;
  banner: string | null;
  summary: Summary | null;
  retryQueue: PendingDecision[];
  done: boolean;
}

/** Client-side mirror of the server precondition: a verdict must be
 * chosen, and discard needs a reason in {2,3,4}. */
export function canSubmit(verdict: Verdict | null, reasonCode?: number): boolean {
  if (verdict === null) return false;
  if (verdict === "discard") {
    return reasonCode !== undefined && Object.values(DISCARD_REASONS).includes(reasonCode);
  }
  return true;
}

export class ReviewController {
  readonly state: ReviewState = {
    current: null,
    queuedIds: [],
    awaitingReason: false,
    banner: null,
    summary: null,
    retryQueue: [],
    done: false,
  };

  private listeners: Array<(state: ReviewState) => void> = [];

  constructor(
    private readonly api: ApiClient,
    private readonly annotatorId: string,
  ) {}

  onChange(listener: (state: ReviewState) => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  async start(): Promise<void> {
    const page = await this.api.queue();
    this.state.queuedIds = page.items.map((item) => item.bundle_id);
    this.state.summary = await this.api.summary();
    await this.advance();
  }

  private async advance(): Promise<void> {
    const nextId = this.state.queuedIds.shift();
    this.state.awaitingReason = false;
    if (nextId === undefined) {
      this.state.current = null;
      this.state.done = true;
      this.emit();
      return;
    }
    this.state.current = await this.api.bundle(nextId);
    this.state.done = false;
    this.emit();
  }

  /** Keyboard entry point; returns true when the key did something. */
  async handleKey(key: string): Promise<boolean> {
    if (this.state.current === null) return false;
    const normalized = key.toLowerCase();
    if (this.state.awaitingReason) {
      if (normalized === "escape") {
        this.state.awaitingReason = false;
        this.emit();
        return true;
      }
      const reason = DISCARD_REASONS[normalized];
      if (reason !== undefined) {
        await this.submit("discard", reason);
        return true;
      }
      return false;
    }
    if (normalized === "k") {
      await this.submit("keep");
      return true;
    }
    if (normalized === "d") {
      this.state.awaitingReason = true;
      this.emit();
      return true;
    }
    return false;
  }

  async submit(verdict: Verdict, reasonCode?: number): Promise<void> {
    const card = this.state.current;
    if (card === null) return;
    if (!canSubmit(verdict, reasonCode)) {
      this.state.banner = "discard needs a reason (2, 3 or 4)";
      this.emit();
      return;
    }

    this.state.banner = null;
    this.state.awaitingReason = false;
    try {
      await this.api.decide({
        bundle_id: card.bundle_id,
        verdict,
        reason_code: reasonCode,
        annotator_id: this.annotatorId,
      });
    } catch (error) {
      if (error instanceof ApiError) {
        // server said no: card remains, error surfaced
        this.state.banner = `rejected (${error.status}): ${error.message}`;
        this.emit();
        return;
      }
      // network failure: keep the card behind a retry banner; the queued
      // decision flushes (and the view advances) once we are back online
      this.state.retryQueue.push({
        bundle_id: card.bundle_id,
        verdict,
        reason_code: reasonCode,
      });
      this.state.banner = `offline: ${this.state.retryQueue.length} decision(s) queued for retry`;
      this.emit();
      return;
    }
    this.state.summary = await this.api.summary().catch(() => this.state.summary);
    await this.advance();
  }

  /** Flush locally queued decisions; stops at the first network failure. */
  async retryQueued(): Promise<void> {
    let flushedCurrent = false;
    while (this.state.retryQueue.length > 0) {
      const pending = this.state.retryQueue[0]!;
      try {
        await this.api.decide({ ...pending, annotator_id: this.annotatorId });
      } catch (error) {
        if (error instanceof ApiError) {
          // permanently rejected; drop it and surface the error
          this.state.retryQueue.shift();
          this.state.banner = `queued decision rejected (${error.status}): ${error.message}`;
          this.emit();
          continue;
        }
        this.emit();
        return;
      }
      if (pending.bundle_id === this.state.current?.bundle_id) {
        flushedCurrent = true;
      }
      this.state.retryQueue.shift();
    }
    this.state.banner = null;
    this.state.summary = await this.api.summary().catch(() => this.state.summary);
    if (flushedCurrent) {
      await this.advance();
    } else {
      this.emit();
    }
  }
}
