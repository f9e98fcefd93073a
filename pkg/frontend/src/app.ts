/** Page wiring: poll the run, render the pending stage, submit selections. */

import { ApiClient, type RunSummary } from "./api.js";
import { pollOnce, submitSelection, type PollState } from "./flow.js";
import { metricsTableHtml, stageHtml } from "./views.js";

const client = new ApiClient("");
const root = document.getElementById("app") as HTMLElement;

const STAGE_ORDER = ["code", "subtheme", "theme"];

function runIdFromLocation(): string | null {
  return new URLSearchParams(window.location.search).get("run");
}

function landingHtml(): string {
  return (
    `<form id="open-run" class="landing">` +
    `<label>run id <input name="run" placeholder="e.g. 6f62b1c4a0d1" required></label>` +
    `<button type="submit">open</button>` +
    `</form>`
  );
}

function notice(text: string, cls = "notice"): void {
  const box = document.createElement("p");
  box.className = cls;
  box.textContent = text;
  root.prepend(box);
  setTimeout(() => box.remove(), 6000);
}

async function currentFocus(summary: RunSummary): Promise<{ interview: string; stage: string }> {
  if (summary.awaiting) {
    return { interview: summary.awaiting.interview, stage: summary.awaiting.stage };
  }
  // completed or running: show the furthest stage of the first interview
  const interviews = Object.keys(summary.interviews).sort();
  const first = interviews[0]!;
  const stages = summary.interviews[first]!.stages;
  let focus = STAGE_ORDER[0]!;
  for (const stage of STAGE_ORDER) {
    if (stages[stage] && stages[stage]!.state !== "pending") focus = stage;
  }
  return { interview: first, stage: focus };
}

function headerHtml(summary: RunSummary): string {
  return (
    `<header><h1>run ${summary.run_id}</h1>` +
    `<p class="rq">${summary.research_question}</p>` +
    `<p class="status">status: <b>${summary.status}</b> · policy: ${summary.policy}</p>` +
    `<nav class="picker">interview ` +
    Object.keys(summary.interviews)
      .sort()
      .map((iid) => `<button class="pick-interview" data-iid="${iid}">${iid}</button>`)
      .join(" ") +
    ` stage ` +
    STAGE_ORDER.map((s) => `<button class="pick-stage" data-stage="${s}">${s}</button>`).join(" ") +
    ` <button id="load-metrics">metrics</button></nav></header>` +
    `<div id="metrics-box"></div><div id="stage-box"></div>`
  );
}

class Page {
  private focus: { interview: string; stage: string } | null = null;

  constructor(private runId: string) {}

  async refresh(): Promise<void> {
    const summary = await client.getRun(this.runId);
    if (!document.querySelector("header")) {
      root.innerHTML = headerHtml(summary);
      this.bindHeader();
    } else {
      const status = document.querySelector(".status");
      if (status) status.innerHTML = `status: <b>${summary.status}</b> · policy: ${summary.policy}`;
    }
    if (!this.focus || summary.awaiting) {
      this.focus = await currentFocus(summary);
    }
    await this.renderStage(summary);
  }

  private bindHeader(): void {
    root.addEventListener("click", async (event) => {
      const target = event.target as HTMLElement;
      if (target.matches(".pick-interview")) {
        this.focus = { interview: target.dataset.iid!, stage: this.focus?.stage ?? "code" };
        await this.refresh();
      } else if (target.matches(".pick-stage")) {
        this.focus = { interview: this.focus?.interview ?? "", stage: target.dataset.stage! };
        await this.refresh();
      } else if (target.id === "load-metrics") {
        const box = document.getElementById("metrics-box")!;
        box.innerHTML = "<p>computing metrics…</p>";
        try {
          box.innerHTML = metricsTableHtml(await client.report(this.runId));
        } catch (error) {
          box.innerHTML = `<p class="failure-notice">metrics unavailable: ${String(error)}</p>`;
        }
      } else if (target.matches("button.select")) {
        await this.select(target.dataset.select!);
      }
    });
  }

  private async select(perspective: string): Promise<void> {
    if (!this.focus) return;
    const outcome = await submitSelection(
      client,
      this.runId,
      this.focus.interview,
      this.focus.stage,
      perspective,
    );
    if (outcome.status === "conflict") {
      notice(`selection conflict: ${outcome.message} — state refreshed`, "notice conflict");
    }
    this.focus = null; // advance to whatever the server says is next
    await this.refresh();
  }

  private async renderStage(summary: RunSummary): Promise<void> {
    if (!this.focus) return;
    const box = document.getElementById("stage-box")!;
    try {
      const view = await client.getStage(this.runId, this.focus.interview, this.focus.stage);
      box.innerHTML = stageHtml(view, summary);
    } catch (error) {
      box.innerHTML = `<p class="placeholder">stage not available yet (${String(error)})</p>`;
    }
  }

  async pollLoop(): Promise<void> {
    let state: PollState = { seq: 0, status: "" };
    for (;;) {
      try {
        const result = await pollOnce(client, this.runId, state, 10);
        if (result.changed) {
          await this.refresh();
        }
        state = result.state;
      } catch {
        await new Promise((resolve) => setTimeout(resolve, 2000));
      }
    }
  }
}

function boot(): void {
  const runId = runIdFromLocation();
  if (!runId) {
    root.innerHTML = landingHtml();
    const form = document.getElementById("open-run") as HTMLFormElement;
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      const value = new FormData(form).get("run");
      window.location.search = `?run=${value}`;
    });
    return;
  }
  const page = new Page(runId);
  void page.refresh();
  void page.pollLoop();
}

boot();
