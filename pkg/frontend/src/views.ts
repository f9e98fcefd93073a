/** HTML rendering for the stage review page (pure string builders). */

import type { ResultFile, RunSummary, StageView } from "./api.js";
import { badgesByEntity, mergeGroups, splitLinks } from "./badges.js";

export const PANELS = ["initial", "theory", "data", "applied"] as const;
export const CHUNK_PREVIEW_CHARS = 160;

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Chunk text is shown verbatim; long chunks collapse behind an explicit
 * expand control, never a silent ellipsis. */
export function chunkHtml(text: string): string {
  if (text.length <= CHUNK_PREVIEW_CHARS) {
    return `<div class="chunk">${esc(text)}</div>`;
  }
  return (
    `<details class="chunk expandable">` +
    `<summary>${esc(text.slice(0, CHUNK_PREVIEW_CHARS))}<button class="expand">… show all</button></summary>` +
    `<div class="chunk-full">${esc(text)}</div>` +
    `</details>`
  );
}

interface EntityNode {
  id: string;
  name: string;
  definition?: string;
  chunks?: string[];
  children?: EntityNode[];
}

function entityNodes(structure: Record<string, any>): EntityNode[] {
  const out: EntityNode[] = [];
  const labelOrder = (a: string, b: string) => {
    const na = Number(a.split(" ").pop());
    const nb = Number(b.split(" ").pop());
    return na - nb || a.localeCompare(b);
  };
  for (const key of Object.keys(structure).sort(labelOrder)) {
    if (key === "metadata" || key === "modification_summary") continue;
    const value = structure[key];
    const node: EntityNode = { id: key, name: value.name ?? "" };
    if (value.definition) node.definition = value.definition;
    if (Array.isArray(value.chunks)) node.chunks = value.chunks;
    const nested = value.codes ?? value.subthemes;
    if (nested) node.children = entityNodes(nested);
    out.push(node);
  }
  return out;
}

function badgeHtml(label: string, kind: string, detail: string): string {
  return `<span class="badge badge-${kind}" title="${esc(detail)}">${esc(label)}</span>`;
}

function nodeHtml(node: EntityNode, decorations: Map<string, string>): string {
  const badges = decorations.get(node.id) ?? "";
  const chunks = (node.chunks ?? []).map(chunkHtml).join("");
  const children = (node.children ?? []).map((child) => nodeHtml(child, decorations)).join("");
  const definition = node.definition
    ? `<div class="definition">${esc(node.definition)}</div>`
    : "";
  return (
    `<div class="entity" data-entity="${esc(node.id)}">` +
    `<div class="entity-head"><span class="entity-id">${esc(node.id)}</span>` +
    `<span class="entity-name">${esc(node.name)}</span>${badges}</div>` +
    definition + chunks + children +
    `</div>`
  );
}

export function panelHtml(
  condition: string,
  body: ResultFile | null,
  view: StageView,
  selectable: boolean,
): string {
  const title = condition === "initial" ? "initial (coding agent)" : condition;
  if (body === null) {
    return `<section class="panel pending" data-panel="${condition}"><h3>${title}</h3>` +
      `<p class="placeholder">still running…</p></section>`;
  }
  if (body.failed) {
    return (
      `<section class="panel failed" data-panel="${condition}"><h3>${title}</h3>` +
      `<p class="failure-notice">refinement failed: ${esc(body.error ?? "unknown error")}</p>` +
      `</section>`
    );
  }
  const decorations = new Map<string, string>();
  if (body.operations) {
    for (const [entity, badges] of badgesByEntity(body.operations)) {
      decorations.set(
        entity,
        badges.map((badge) => badgeHtml(badge.label, badge.kind, badge.detail)).join(""),
      );
    }
    for (const [part, link] of splitLinks(body.operations)) {
      const existing = decorations.get(part) ?? "";
      decorations.set(
        part,
        existing +
          `<span class="split-link" title="split from ${esc(link.origin)}">⑂ ${esc(link.origin)}</span>`,
      );
    }
    for (const [result, sources] of mergeGroups(body.operations)) {
      const existing = decorations.get(result) ?? "";
      decorations.set(
        result,
        existing + `<span class="merge-group">⊕ ${esc(sources.join(" + "))}</span>`,
      );
    }
  }
  const nodes = entityNodes(body.structure).map((node) => nodeHtml(node, decorations)).join("");
  const summary = body.modification_summary
    ? `<div class="mod-summary"><h4>modification summary</h4><p>${esc(body.modification_summary)}</p></div>`
    : "";
  const selectedMark = view.selection === condition ? `<span class="selected-mark">selected</span>` : "";
  const button = selectable
    ? `<button class="select" data-select="${condition}">select ${condition}</button>`
    : "";
  return (
    `<section class="panel" data-panel="${condition}"><h3>${title} ${selectedMark}</h3>` +
    nodes + summary + button +
    `</section>`
  );
}

export function memoHtml(initial: ResultFile | null): string {
  const metadata = (initial?.structure as any)?.metadata;
  if (!metadata) return "";
  const did = metadata.what_llm_did ?? {};
  const reflection = metadata.self_reflection ?? {};
  return (
    `<aside class="memo"><h4>coding agent memo</h4>` +
    `<p><b>actions:</b> ${esc(did.main_actions ?? "")}</p>` +
    `<p><b>examples:</b> ${esc(did.examples ?? "")}</p>` +
    `<p><b>confident:</b> ${esc(reflection.confident_results ?? "")}</p>` +
    `<p><b>uncertain:</b> ${esc(reflection.uncertain_results ?? "")}</p>` +
    `<p><b>review focus:</b> ${esc(reflection.recommended_review ?? "")}</p>` +
    `</aside>`
  );
}

export function stageHtml(view: StageView, summary: RunSummary): string {
  const awaitingHere =
    summary.status === "awaiting_selection" &&
    summary.awaiting?.interview === view.interview &&
    summary.awaiting?.stage === view.stage;
  const panels = PANELS.map((condition) => {
    const body = condition === "initial" ? view.initial : view.refinements[condition] ?? null;
    const failed = condition !== "initial" && condition in view.failures;
    const selectable = awaitingHere && !failed && body !== null && !body?.failed;
    return panelHtml(condition, body, view, selectable);
  }).join("");
  const baseline = view.refinements["selfrefine"];
  const baselinePanel = baseline
    ? `<details class="baseline"><summary>self-refinement baseline (not selectable)</summary>` +
      panelHtml("selfrefine", baseline, view, false) +
      `</details>`
    : "";
  const banner = awaitingHere
    ? `<p class="awaiting">selection required — pick the refinement to carry forward</p>`
    : `<p class="stage-state">state: ${esc(view.state)}${view.selection ? `, selected: ${esc(view.selection)}` : ""}</p>`;
  return (
    `<div class="stage" data-interview="${esc(view.interview)}" data-stage="${esc(view.stage)}">` +
    `<h2>${esc(view.interview)} / ${esc(view.stage)}</h2>` + banner +
    memoHtml(view.initial) +
    `<div class="columns">${panels}</div>` + baselinePanel +
    `</div>`
  );
}

export function metricsTableHtml(report: Record<string, any>): string {
  const rows: string[] = [];
  for (const level of Object.keys(report.levels ?? {})) {
    const aggregate = report.levels[level].aggregate ?? {};
    for (const condition of report.conditions ?? []) {
      const row = aggregate[condition];
      if (!row) continue;
      rows.push(
        `<tr><td>${esc(level)}</td><td>${esc(condition)}</td>` +
          `<td>${(row.recall * 100).toFixed(1)}</td>` +
          `<td>${(row.match_rate * 100).toFixed(1)}</td>` +
          `<td>${(row.diversity_mean * 100).toFixed(1)}</td>` +
          `<td>${(row.text_utilization * 100).toFixed(1)}</td></tr>`,
      );
    }
  }
  return (
    `<table class="metrics"><thead><tr><th>level</th><th>condition</th>` +
    `<th>recall %</th><th>match rate %</th><th>diversity %</th><th>utilization %</th>` +
    `</tr></thead><tbody>${rows.join("")}</tbody></table>`
  );
}
