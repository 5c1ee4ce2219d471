import { RatingServiceClient } from "./api";
import { Dashboard } from "./dashboard";
import { RaterApp } from "./rater";

function raterId(): string {
  const key = "pqbench-rater-id";
  let id = localStorage.getItem(key);
  if (!id) {
    id = `rater-${Math.random().toString(36).slice(2, 10)}`;
    localStorage.setItem(key, id);
  }
  return id;
}

function requireExperimentId(): string {
  const id = new URLSearchParams(window.location.search).get("experiment");
  if (!id) {
    document.body.innerHTML =
      "<p>Missing <code>?experiment=&lt;id&gt;</code> in the URL.</p>";
    throw new Error("experiment id missing");
  }
  return id;
}

export function bootRater(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const app = new RaterApp(
    document,
    root,
    new RatingServiceClient(""),
    requireExperimentId(),
    raterId(),
  );
  void app.start();
}

export function bootDashboard(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const dashboard = new Dashboard(
    root,
    new RatingServiceClient(""),
    requireExperimentId(),
  );
  dashboard.start();
}

declare global {
  interface Window {
    pqbench: { bootRater: () => void; bootDashboard: () => void };
  }
}

if (typeof window !== "undefined") {
  window.pqbench = { bootRater, bootDashboard };
}
