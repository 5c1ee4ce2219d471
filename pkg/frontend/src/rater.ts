import { RatingServiceClient } from "./api";
import { RaterSession, SessionOptions } from "./session";
import { Side } from "./types";

export interface RaterAppOptions extends SessionOptions {
  /** soft reminder after this many ms on one pair; never auto-submits */
  nudgeAfterMs?: number;
}

/**
 * Side-by-side rating page: reference context on top, two candidates below,
 * one click (or arrow key, or spacebar for "can't tell") per decision, next
 * pair fetched immediately without a page reload.
 */
export class RaterApp {
  session: RaterSession;
  root: HTMLElement;

  private doc: Document;
  private nudgeTimer: ReturnType<typeof setTimeout> | null = null;
  private nudgeAfterMs: number;
  private keyHandler: (event: KeyboardEvent) => void;

  constructor(
    doc: Document,
    root: HTMLElement,
    client: RatingServiceClient,
    experimentId: string,
    raterId: string,
    options: RaterAppOptions = {},
  ) {
    this.doc = doc;
    this.root = root;
    this.nudgeAfterMs = options.nudgeAfterMs ?? 15000;
    this.session = new RaterSession(client, experimentId, raterId, options);
    this.root.innerHTML = `
      <div class="reference-row">
        <figure class="reference">
          <img data-role="reference" alt="reference image" />
          <figcaption>reference</figcaption>
        </figure>
        <figure class="overview" hidden>
          <img data-role="overview" alt="reference in context" />
          <figcaption>whole-image overview</figcaption>
        </figure>
      </div>
      <p class="prompt">Click the image that differs <em>less</em> from the reference
        (&#8592; / &#8594; keys; space when you cannot tell).</p>
      <div class="candidates">
        <button class="candidate" data-role="left"><img alt="left candidate" /></button>
        <button class="candidate" data-role="right"><img alt="right candidate" /></button>
      </div>
      <p data-role="status" class="status"></p>
      <p data-role="nudge" class="nudge" hidden>Still looking? Go with your first impression.</p>
      <p data-role="counter" class="counter">0 judgements this session</p>
      <div data-role="complete" class="complete" hidden>
        <h2>Experiment complete</h2>
        <p>No more pairs are available. Thank you!</p>
      </div>
      <div data-role="error" class="error" hidden>
        <span data-role="error-text"></span>
        <button data-role="retry">Retry</button>
      </div>
    `;
    this.part("left").addEventListener("click", () => void this.choose("left"));
    this.part("right").addEventListener("click", () => void this.choose("right"));
    this.part("retry").addEventListener("click", () => void this.advance());
    this.keyHandler = (event: KeyboardEvent) => {
      const sides: Record<string, Side> = {
        ArrowLeft: "left",
        ArrowRight: "right",
        " ": "either",
      };
      const side = sides[event.key];
      if (side && this.session.current) {
        event.preventDefault();
        void this.choose(side);
      }
    };
    this.doc.addEventListener("keydown", this.keyHandler);
  }

  part(role: string): HTMLElement {
    const el = this.root.querySelector(`[data-role="${role}"]`);
    if (!el) throw new Error(`missing element ${role}`);
    return el as HTMLElement;
  }

  /** item id currently rendered on a side (test hook and invariant anchor) */
  displayed(side: "left" | "right"): string | null {
    return this.part(side).getAttribute("data-item-id");
  }

  async start(): Promise<void> {
    await this.advance();
  }

  async advance(): Promise<void> {
    this.part("error").hidden = true;
    let hasPair: boolean;
    try {
      hasPair = await this.session.loadNext();
    } catch (error) {
      this.showError(`could not fetch the next pair: ${String(error)}`);
      return;
    }
    if (!hasPair) {
      this.showComplete();
      return;
    }
    this.renderPair();
  }

  private renderPair(): void {
    const displayed = this.session.current;
    if (!displayed) return;
    const media = displayed.assignment.media;
    const byItem: Record<string, string> = {
      [displayed.assignment.item_a]: media.item_a,
      [displayed.assignment.item_b]: media.item_b,
    };
    (this.part("reference") as HTMLImageElement).src = media.reference;
    const overviewFigure = this.root.querySelector(".overview") as HTMLElement;
    if (media.overview) {
      overviewFigure.hidden = false;
      (this.part("overview") as HTMLImageElement).src = media.overview;
    } else {
      overviewFigure.hidden = true;
    }
    for (const side of ["left", "right"] as const) {
      const button = this.part(side) as HTMLButtonElement;
      const itemId = displayed[side];
      button.setAttribute("data-item-id", itemId);
      button.disabled = false;
      const img = button.querySelector("img") as HTMLImageElement;
      img.src = byItem[itemId];
      img.onerror = () => this.showError(`image failed to load: ${byItem[itemId]}`);
    }
    this.part("status").textContent = `pair ${displayed.assignment.pair_id.slice(0, 8)}`;
    this.resetNudge();
  }

  private async choose(side: Side): Promise<void> {
    if (!this.session.current) return;
    for (const s of ["left", "right"] as const) {
      (this.part(s) as HTMLButtonElement).disabled = true;
    }
    try {
      await this.session.choose(side);
      this.part("counter").textContent =
        `${this.session.judgementCount} judgements this session`;
    } catch (error) {
      this.showError(`judgement rejected: ${String(error)}`);
      return;
    }
    await this.advance();
  }

  private showComplete(): void {
    this.clearNudge();
    this.part("complete").hidden = false;
    (this.root.querySelector(".candidates") as HTMLElement).hidden = true;
  }

  private showError(message: string): void {
    this.part("error").hidden = false;
    this.part("error-text").textContent = message;
  }

  private resetNudge(): void {
    this.clearNudge();
    this.part("nudge").hidden = true;
    this.nudgeTimer = setTimeout(() => {
      this.part("nudge").hidden = false;
    }, this.nudgeAfterMs);
  }

  private clearNudge(): void {
    if (this.nudgeTimer !== null) {
      clearTimeout(this.nudgeTimer);
      this.nudgeTimer = null;
    }
  }

  dispose(): void {
    this.clearNudge();
    this.doc.removeEventListener("keydown", this.keyHandler);
  }
}
