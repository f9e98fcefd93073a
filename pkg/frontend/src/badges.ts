/** Badge derivation: every badge corresponds 1:1 to one server log entry.
 *
 * The UI performs no structural computation of its own; operations arrive
 * inferred by the server and are only mapped onto display anchors here.
 */

import type { OperationLogJson, OpKind, StructOpJson } from "./api.js";

export interface Badge {
  kind: OpKind;
  /** After-side entity id the badge is anchored to. */
  entity: string;
  label: string;
  detail: string;
  op: StructOpJson;
}

function anchorFor(op: StructOpJson): string {
  switch (op.kind) {
    case "keep":
    case "rename":
      return op.new_id ?? op.subjects[0] ?? "?";
    case "merge":
      return op.result_id ?? "?";
    case "split":
      return op.partition?.[0]?.id ?? op.subjects[0] ?? "?";
    case "reassign":
      return op.target_parent ?? "?";
  }
}

export function badgeFor(op: StructOpJson): Badge {
  const entity = anchorFor(op);
  switch (op.kind) {
    case "keep":
      return { kind: op.kind, entity, label: "kept", detail: "unchanged", op };
    case "rename":
      return {
        kind: op.kind,
        entity,
        label: "renamed",
        detail: `renamed to "${op.new_name ?? ""}"`,
        op,
      };
    case "merge":
      return {
        kind: op.kind,
        entity,
        label: "merged",
        detail: `merged from ${op.subjects.join(" + ")}`,
        op,
      };
    case "split": {
      const parts = (op.partition ?? []).map((p) => p.id).join(", ");
      return {
        kind: op.kind,
        entity,
        label: "split",
        detail: `${op.subjects[0]} split into ${parts}`,
        op,
      };
    }
    case "reassign":
      return {
        kind: op.kind,
        entity,
        label: "reassigned",
        detail: `"${op.subjects[0]}" moved ${op.source_parent} → ${op.target_parent}`,
        op,
      };
  }
}

/** One badge per operation, in log order. */
export function badgesFor(log: OperationLogJson): Badge[] {
  return log.operations.map(badgeFor);
}

export function badgesByEntity(log: OperationLogJson): Map<string, Badge[]> {
  const out = new Map<string, Badge[]>();
  for (const badge of badgesFor(log)) {
    const bucket = out.get(badge.entity) ?? [];
    bucket.push(badge);
    out.set(badge.entity, bucket);
  }
  return out;
}

/** Secondary decoration: part id -> its split origin and sibling part ids. */
export function splitLinks(log: OperationLogJson): Map<string, { origin: string; siblings: string[] }> {
  const out = new Map<string, { origin: string; siblings: string[] }>();
  for (const op of log.operations) {
    if (op.kind !== "split" || !op.partition) continue;
    const ids = op.partition.map((p) => p.id);
    for (const id of ids) {
      out.set(id, {
        origin: op.subjects[0] ?? "?",
        siblings: ids.filter((other) => other !== id),
      });
    }
  }
  return out;
}

/** Secondary decoration: merge result id -> the merged source ids. */
export function mergeGroups(log: OperationLogJson): Map<string, string[]> {
  const out = new Map<string, string[]>();
  for (const op of log.operations) {
    if (op.kind === "merge" && op.result_id) {
      out.set(op.result_id, [...op.subjects]);
    }
  }
  return out;
}
