// @vitest-environment jsdom
//
// Scripted rater session against a live rating service: the real DOM flow
// (click a candidate, next pair renders, repeat) driven for 20 judgements.
import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { RatingServiceClient } from "../src/api";
import { RaterApp } from "../src/rater";
import { JudgementResponse } from "../src/types";

const PORT = 18000 + Math.floor(Math.random() * 10000);
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;
let experimentId: string;

async function waitForServer(): Promise<void> {
  const deadline = Date.now() + 30_000;
  while (Date.now() < deadline) {
    try {
      await fetch(`${BASE}/api/v1/experiments/warmup`);
      return;
    } catch {
      if (server.exitCode !== null) {
        throw new Error(`server exited with code ${server.exitCode}`);
      }
      await new Promise((r) => setTimeout(r, 150));
    }
  }
  throw new Error("rating service did not come up");
}

beforeAll(async () => {
  server = spawn(
    "python3",
    ["-m", "pqbench.cli", "serve", "--host", "127.0.0.1", "--port", String(PORT),
     "--data-dir", mkdtempSync(join(tmpdir(), "pqbench-e2e-"))],
    { stdio: "ignore" },
  );
  await waitForServer();
  const response = await fetch(`${BASE}/api/v1/experiments`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({
      name: "ui-e2e",
      items: Array.from({ length: 6 }, (_, i) => ({
        item_id: `img-${i}`,
        group_id: "scene",
        media_uri: `/media/img-${i}.png`,
      })),
      groups: { scene: { reference_uri: "/media/ref.png", overview_uri: "/media/full.png" } },
      scheduler_seed: 11,
    }),
  });
  expect(response.status).toBe(201);
  experimentId = (await response.json()).experiment_id;
}, 60_000);

afterAll(() => {
  server?.kill("SIGKILL");
});

/** client wrapper that records every submission and its outcome */
class RecordingClient extends RatingServiceClient {
  submissions: { body: Record<string, unknown>; response: JudgementResponse }[] = [];

  override async submitJudgement(
    experiment: string,
    body: Parameters<RatingServiceClient["submitJudgement"]>[1],
  ): Promise<JudgementResponse> {
    const response = await super.submitJudgement(experiment, body);
    this.submissions.push({ body: { ...body }, response });
    return response;
  }
}

describe("rating loop end to end", () => {
  it("completes 20 judgements through the live UI", async () => {
    const client = new RecordingClient(BASE);
    const root = document.createElement("main");
    document.body.appendChild(root);
    const app = new RaterApp(document, root, client, experimentId, "e2e-rater", {
      nudgeAfterMs: 60_000,
    });
    await app.start();

    const sides = ["left", "right"] as const;
    const displayedBefore: { left: string; right: string; pair: string }[] = [];
    for (let i = 0; i < 20; i += 1) {
      // a pair must be on screen, both candidates resolvable to items
      const left = app.displayed("left");
      const right = app.displayed("right");
      expect(left).toBeTruthy();
      expect(right).toBeTruthy();
      expect(left).not.toBe(right);
      const pairId = app.session.current!.assignment.pair_id;
      displayedBefore.push({ left: left!, right: right!, pair: pairId });

      const button = app.part(sides[i % 2]) as HTMLButtonElement;
      expect(button.disabled).toBe(false);
      button.dispatchEvent(new window.MouseEvent("click", { bubbles: true }));
      // wait until the submission landed and the next pair rendered
      const target = i + 1;
      const deadline = Date.now() + 10_000;
      while (
        (app.session.judgementCount < target ||
          (!app.session.current && !app.session.complete)) &&
        Date.now() < deadline
      ) {
        await new Promise((r) => setTimeout(r, 10));
      }
      expect(app.session.judgementCount).toBe(target);
      expect(app.session.current).not.toBeNull(); // next pair without reload
    }

    // every submission was accepted and numbered by the server
    expect(client.submissions).toHaveLength(20);
    client.submissions.forEach((entry, i) => {
      expect(entry.response.seq).toBeGreaterThan(0);
      // no judgement references an item that was not displayed for that pair
      const shown = displayedBefore[i];
      const pairItems = [entry.body.item_a, entry.body.item_b].sort();
      expect(pairItems).toEqual([shown.left, shown.right].sort());
      expect([shown.left, shown.right]).toContain(entry.body.winner);
      expect(entry.body.pair_id).toBe(shown.pair);
    });

    // the server agrees on the judgement count
    const scores = await client.getScores(experimentId);
    expect(scores.total_judgements).toBe(20);

    // the counter reflects the session's work
    expect(root.querySelector('[data-role="counter"]')!.textContent).toContain("20");
    app.dispose();
  }, 120_000);

  it("keyboard choices submit for the displayed pair", async () => {
    const client = new RecordingClient(BASE);
    const root = document.createElement("main");
    document.body.appendChild(root);
    const app = new RaterApp(document, root, client, experimentId, "kbd-rater", {
      nudgeAfterMs: 60_000,
    });
    await app.start();
    const shown = [app.displayed("left"), app.displayed("right")];
    document.dispatchEvent(new window.KeyboardEvent("keydown", { key: "ArrowLeft" }));
    const deadline = Date.now() + 10_000;
    while (app.session.judgementCount < 1 && Date.now() < deadline) {
      await new Promise((r) => setTimeout(r, 10));
    }
    expect(app.session.judgementCount).toBe(1);
    expect(client.submissions).toHaveLength(1);
    expect(client.submissions[0].body.winner).toBe(shown[0]);
    app.dispose();
  }, 60_000);
});
