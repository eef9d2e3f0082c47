// Cursor-resumable alert stream.
//
// The panel must be lossless and duplicate-free with respect to the server
// feed: alerts arrive ordered by id, the cursor is the last id shown, and a
// dropped connection resumes from that cursor after a backoff. Even if the
// server replays alerts at or below the cursor, they are skipped.

import type { AlertDoc, AlertsPage } from './types.js';

export type AlertFetcher = (cursor: number, waitMs: number) => Promise<AlertsPage>;
export type Sleeper = (ms: number) => Promise<void>;

export interface AlertStreamOptions {
  onAlert: (alert: AlertDoc) => void;
  onConnectionChange?: (up: boolean) => void;
  waitMs?: number;
  initialBackoffMs?: number;
  maxBackoffMs?: number;
  sleep?: Sleeper;
  startCursor?: number;
}

const defaultSleep: Sleeper = (ms) => new Promise((resolve) => setTimeout(resolve, ms));

export class AlertStream {
  private cursor: number;
  private backoffMs: number;
  private stopped = false;
  private readonly waitMs: number;
  private readonly initialBackoffMs: number;
  private readonly maxBackoffMs: number;

  constructor(
    private readonly fetchAlerts: AlertFetcher,
    private readonly options: AlertStreamOptions,
  ) {
    this.cursor = options.startCursor ?? 0;
    this.waitMs = options.waitMs ?? 10_000;
    this.initialBackoffMs = options.initialBackoffMs ?? 250;
    this.maxBackoffMs = options.maxBackoffMs ?? 8_000;
    this.backoffMs = this.initialBackoffMs;
  }

  get position(): number {
    return this.cursor;
  }

  stop(): void {
    this.stopped = true;
  }

  /** Long-poll until stopped. Resolves when stop() takes effect. */
  async run(): Promise<void> {
    while (!this.stopped) {
      try {
        const page = await this.fetchAlerts(this.cursor, this.waitMs);
        this.options.onConnectionChange?.(true);
        this.backoffMs = this.initialBackoffMs;
        for (const alert of page.alerts) {
          if (alert.id <= this.cursor) continue; // server replay: drop
          this.options.onAlert(alert);
          this.cursor = alert.id;
        }
      } catch {
        this.options.onConnectionChange?.(false);
        await this.sleepImpl(this.backoffMs);
        this.backoffMs = Math.min(this.backoffMs * 2, this.maxBackoffMs);
      }
    }
  }

  private sleepImpl(ms: number): Promise<void> {
    return (this.options.sleep ?? defaultSleep)(ms);
  }
}

/** Ordered, duplicate-free collection backing the alert panel. */
export class AlertPanel {
  readonly alerts: AlertDoc[] = [];
  private lastId = 0;

  append(alert: AlertDoc): boolean {
    if (alert.id <= this.lastId) return false;
    this.alerts.push(alert);
    this.lastId = alert.id;
    return true;
  }

  ids(): number[] {
    return this.alerts.map((a) => a.id);
  }
}

/** Where an alert should link: breaches go to the SLA report, evidence-
 * bearing findings to the ledger records they cite. */
export function alertTarget(alert: AlertDoc): { view: string; refs: string[] } {
  if (alert.kind === 'SLA_VIOLATION') return { view: 'sla-report', refs: [] };
  if (alert.kind === 'POLICY_MISMATCH' || alert.kind === 'AUDIT_FINDING') {
    return { view: 'ledger', refs: alert.evidence };
  }
  return { view: 'alerts', refs: [] };
}
