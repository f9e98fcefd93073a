/** Selection flow: optimistic submit with conflict reconciliation via 409. */

import { ApiClient, ConflictError, type RunSummary } from "./api.js";

export type SelectionOutcome =
  | { status: "accepted"; summary: RunSummary }
  | { status: "conflict"; summary: RunSummary; message: string };

/** POST the selection; on 409 refetch authoritative state instead of failing. */
export async function submitSelection(
  client: ApiClient,
  runId: string,
  interview: string,
  stage: string,
  perspective: string,
): Promise<SelectionOutcome> {
  try {
    const summary = await client.submitSelection(runId, interview, stage, perspective);
    return { status: "accepted", summary };
  } catch (error) {
    if (error instanceof ConflictError) {
      const summary = await client.getRun(runId);
      return { status: "conflict", summary, message: error.detail.message };
    }
    throw error;
  }
}

export interface PollState {
  seq: number;
  status: string;
}

/** One long-poll turn; returns the new cursor and whether a refresh is due. */
export async function pollOnce(
  client: ApiClient,
  runId: string,
  state: PollState,
  timeoutSeconds = 10,
): Promise<{ state: PollState; changed: boolean }> {
  const page = await client.events(runId, state.seq, timeoutSeconds);
  const changed = page.events.length > 0 || page.status !== state.status;
  return { state: { seq: page.next, status: page.status }, changed };
}
