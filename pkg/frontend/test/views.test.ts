import { describe, expect, it } from "vitest";

import type { ResultFile, RunSummary, StageView } from "../src/api";
import { CHUNK_PREVIEW_CHARS, chunkHtml, metricsTableHtml, panelHtml, stageHtml } from "../src/views";

function result(partial: Partial<ResultFile>): ResultFile {
  return {
    structure: {},
    modification_summary: null,
    attempts: 1,
    repairs: [],
    raw_reply: "",
    ...partial,
  };
}

const INITIAL = result({
  structure: {
    "Code 1": { name: "Volunteer shifts", chunks: ["first chunk", "second chunk"] },
    "Code 2": { name: "Watering rota", chunks: ["third chunk"] },
    metadata: {
      what_llm_did: { main_actions: "grouped the transcript", examples: "ex" },
      self_reflection: { confident_results: "c", uncertain_results: "u", recommended_review: "r" },
    },
  },
});

const THEORY = result({
  structure: {
    "Code 1": { name: "Mechanisms of coordination", chunks: ["first chunk", "second chunk", "third chunk"] },
  },
  modification_summary: "Code 1 and Code 2 were merged.",
  operations: {
    operations: [
      { kind: "merge", level: "code", subjects: ["Code 1", "Code 2"], result_id: "Code 1", new_name: "Mechanisms of coordination" },
    ],
    counts: { keep: 0, rename: 0, merge: 1, split: 0, reassign: 0 },
  },
});

const VIEW: StageView = {
  interview: "i1",
  stage: "code",
  state: "refined",
  selection: null,
  failures: { applied: "agent failed" },
  initial: INITIAL,
  refinements: {
    theory: THEORY,
    data: result({
      structure: { "Code 1": { name: "In their words", chunks: ["first chunk"] } },
      operations: {
        operations: [
          { kind: "rename", level: "code", subjects: ["Code 1"], new_name: "In their words" },
        ],
        counts: { keep: 0, rename: 1, merge: 0, split: 0, reassign: 0 },
      },
    }),
    applied: result({ failed: true, error: "agent failed" }),
    selfrefine: null,
  },
};

const SUMMARY: RunSummary = {
  run_id: "r1",
  status: "awaiting_selection",
  awaiting: { interview: "i1", stage: "code" },
  failure: null,
  dataset: "toy",
  research_question: "q",
  policy: "interactive",
  interviews: {},
};

describe("stage rendering", () => {
  it("renders four panels in column order", () => {
    const html = stageHtml(VIEW, SUMMARY);
    const order = ["initial", "theory", "data", "applied"].map((panel) =>
      html.indexOf(`data-panel="${panel}"`),
    );
    expect(order.every((i) => i >= 0)).toBe(true);
    expect([...order].sort((a, b) => a - b)).toEqual(order);
  });

  it("renders one badge element per server operation", () => {
    const html = stageHtml(VIEW, SUMMARY);
    const badgeCount = (html.match(/class="badge badge-/g) ?? []).length;
    const opCount =
      THEORY.operations!.operations.length +
      VIEW.refinements.data!.operations!.operations.length;
    expect(badgeCount).toBe(opCount);
    expect(html).toContain("badge-merge");
    expect(html).toContain("badge-rename");
  });

  it("failed perspective shows a notice and no select button", () => {
    const html = stageHtml(VIEW, SUMMARY);
    expect(html).toContain("refinement failed: agent failed");
    expect(html).not.toContain('data-select="applied"');
    expect(html).toContain('data-select="theory"');
    expect(html).toContain('data-select="initial"');
  });

  it("renders the coding agent memo verbatim", () => {
    const html = stageHtml(VIEW, SUMMARY);
    expect(html).toContain("grouped the transcript");
  });

  it("marks the recorded selection when not awaiting", () => {
    const selectedView = { ...VIEW, selection: "theory" };
    const completed = { ...SUMMARY, status: "complete", awaiting: null };
    const html = stageHtml(selectedView, completed);
    expect(html).toContain("selected: theory");
    expect(html).not.toContain("data-select=");
  });

  it("merge groups and split links render as decorations", () => {
    const html = panelHtml("theory", THEORY, VIEW, true);
    expect(html).toContain("merge-group");
    expect(html).toContain("Code 1 + Code 2");
  });
});

describe("chunk display", () => {
  it("short chunks render whole", () => {
    expect(chunkHtml("short text")).toContain("short text");
    expect(chunkHtml("short text")).not.toContain("expand");
  });

  it("long chunks collapse behind an explicit expand control, never silently", () => {
    const long = "x".repeat(CHUNK_PREVIEW_CHARS * 2);
    const html = chunkHtml(long);
    expect(html).toContain("show all");
    expect(html).toContain(long); // full text present in the document
  });

  it("escapes markup in verbatim text", () => {
    expect(chunkHtml("<script>alert(1)</script>")).not.toContain("<script>");
  });
});

describe("metrics dashboard", () => {
  it("renders a row per level and condition", () => {
    const report = {
      conditions: ["initial", "theory"],
      levels: {
        code: {
          aggregate: {
            initial: { recall: 0.5, match_rate: 0.25, diversity_mean: 0.75, text_utilization: 1 },
            theory: { recall: 0.25, match_rate: 0.5, diversity_mean: 0.8, text_utilization: 1 },
          },
        },
      },
    };
    const html = metricsTableHtml(report);
    expect((html.match(/<tr><td>/g) ?? []).length).toBe(2);
    expect(html).toContain("50.0");
  });
});
