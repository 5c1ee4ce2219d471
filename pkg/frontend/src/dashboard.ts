import { RatingServiceClient } from "./api";
import { ScoreSnapshot } from "./types";

interface History {
  [itemId: string]: number[];
}

const SPARK_POINTS = 40;

function sparkline(values: number[], width = 120, height = 24): string {
  if (values.length < 2) {
    return `<svg width="${width}" height="${height}"></svg>`;
  }
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo || 1;
  const step = width / (values.length - 1);
  const points = values
    .map((v, i) => `${(i * step).toFixed(1)},${(height - 2 - ((v - lo) / span) * (height - 4)).toFixed(1)}`)
    .join(" ");
  return `<svg width="${width}" height="${height}" class="spark"><polyline fill="none" stroke="currentColor" stroke-width="1.5" points="${points}"/></svg>`;
}

/**
 * Operator view: live score table (sorted by MOS, highest first) with a
 * score-over-time sparkline per item, refreshed by polling.  Data staleness
 * is visible through the last-updated stamp.
 */
export class Dashboard {
  history: History = {};
  lastUpdated: Date | null = null;
  lastSnapshot: ScoreSnapshot | null = null;

  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private root: HTMLElement,
    private client: RatingServiceClient,
    private experimentId: string,
    private pollMs = 2000,
  ) {
    this.root.innerHTML = `
      <p data-role="meta" class="meta">loading…</p>
      <table class="scores">
        <thead>
          <tr><th>item</th><th>group</th><th>MOS</th><th>score</th>
              <th>judgements</th><th>trend</th></tr>
        </thead>
        <tbody data-role="rows"></tbody>
      </table>
    `;
  }

  start(): void {
    void this.refresh();
    this.timer = setInterval(() => void this.refresh(), this.pollMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  async refresh(): Promise<void> {
    let snapshot: ScoreSnapshot;
    try {
      snapshot = await this.client.getScores(this.experimentId);
    } catch (error) {
      const meta = this.root.querySelector('[data-role="meta"]') as HTMLElement;
      const stamp = this.lastUpdated ? this.lastUpdated.toLocaleTimeString() : "never";
      meta.textContent = `unreachable (${String(error)}); showing data from ${stamp}`;
      return;
    }
    this.lastSnapshot = snapshot;
    this.lastUpdated = new Date();
    for (const [itemId, entry] of Object.entries(snapshot.items)) {
      const series = (this.history[itemId] ??= []);
      series.push(entry.score);
      if (series.length > SPARK_POINTS) series.shift();
    }
    this.render();
  }

  render(): void {
    if (!this.lastSnapshot) return;
    const meta = this.root.querySelector('[data-role="meta"]') as HTMLElement;
    meta.textContent =
      `${this.lastSnapshot.total_judgements} judgements total; ` +
      `updated ${this.lastUpdated?.toLocaleTimeString()}`;
    const rows = Object.entries(this.lastSnapshot.items)
      .sort(([, a], [, b]) => b.mos - a.mos)
      .map(
        ([itemId, entry]) => `
        <tr>
          <td>${itemId}</td>
          <td>${entry.group_id}</td>
          <td>${entry.mos.toFixed(1)}</td>
          <td>${entry.score.toFixed(1)}</td>
          <td>${entry.n_judgements}</td>
          <td>${sparkline(this.history[itemId] ?? [])}</td>
        </tr>`,
      )
      .join("");
    (this.root.querySelector('[data-role="rows"]') as HTMLElement).innerHTML = rows;
  }

  /** MOS-descending item ids as rendered (test hook). */
  renderedOrder(): string[] {
    return Array.from(this.root.querySelectorAll("tbody tr td:first-child")).map(
      (cell) => cell.textContent ?? "",
    );
  }
}
