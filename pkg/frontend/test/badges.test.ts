import { describe, expect, it } from "vitest";

import type { OperationLogJson } from "../src/api";
import { badgesFor, badgesByEntity, mergeGroups, splitLinks } from "../src/badges";

// shape mirrors the server's persisted refinement files
const LOG: OperationLogJson = {
  operations: [
    { kind: "merge", level: "code", subjects: ["Code 1", "Code 2"], result_id: "Code 1", new_name: "Mechanisms behind shifts" },
    { kind: "keep", level: "code", subjects: ["Code 3"] },
    { kind: "rename", level: "code", subjects: ["Code 4"], new_name: "Conceptual framing of learning" },
    {
      kind: "split",
      level: "code",
      subjects: ["Code 5"],
      partition: [
        { id: "Code 5", name: "kept part", members: ["a"] },
        { id: "Code 6", name: "other voice", members: ["b"] },
      ],
    },
    { kind: "reassign", level: "code", subjects: ["chunk text"], source_parent: "Code 3", target_parent: "Code 4" },
  ],
  counts: { keep: 1, rename: 1, merge: 1, split: 1, reassign: 1 },
};

describe("badge derivation", () => {
  it("produces exactly one badge per server log entry", () => {
    const badges = badgesFor(LOG);
    expect(badges).toHaveLength(LOG.operations.length);
    badges.forEach((badge, i) => expect(badge.op).toBe(LOG.operations[i]));
  });

  it("kind tallies match the server counts 1:1", () => {
    const tally: Record<string, number> = { keep: 0, rename: 0, merge: 0, split: 0, reassign: 0 };
    for (const badge of badgesFor(LOG)) tally[badge.kind] += 1;
    expect(tally).toEqual(LOG.counts);
  });

  it("anchors badges on the after-side entity", () => {
    const byEntity = badgesByEntity(LOG);
    expect(byEntity.get("Code 1")?.[0]?.kind).toBe("merge");
    expect(byEntity.get("Code 4")?.map((b) => b.kind)).toEqual(["rename", "reassign"]);
    expect(byEntity.get("Code 5")?.[0]?.kind).toBe("split");
  });

  it("links split parts back to their origin", () => {
    const links = splitLinks(LOG);
    expect(links.get("Code 6")).toEqual({ origin: "Code 5", siblings: ["Code 5"] });
    expect(links.get("Code 5")).toEqual({ origin: "Code 5", siblings: ["Code 6"] });
  });

  it("groups merged sources under the result", () => {
    expect(mergeGroups(LOG).get("Code 1")).toEqual(["Code 1", "Code 2"]);
  });

  it("relabelled keeps anchor on the new id", () => {
    const relabel: OperationLogJson = {
      operations: [{ kind: "keep", level: "code", subjects: ["Code 2"], new_id: "Code 7" }],
      counts: { keep: 1, rename: 0, merge: 0, split: 0, reassign: 0 },
    };
    expect(badgesFor(relabel)[0]?.entity).toBe("Code 7");
  });
});
