// Contract tests for the UI flows against the stub server, including the
// acceptance cases: plan render, wire-schema golden match, instance
// selection, and undo restoring the prior board state.

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { pollJob } from "../src/polling.js";
import { renderBoard, renderInstancePicker, renderPlanCards } from "../src/render.js";
import {
  buildEditRequest,
  chooseInstance,
  initialState,
  masksPreviewed,
  projectLoaded,
  setConcept,
  setEditPrompt,
  togglePage,
} from "../src/state.js";
import type { MaskPreviewFrame } from "../src/types.js";
import { StubServer, loadPlanFixture, loadWireGolden } from "./stub_server.js";

const PLAN = loadPlanFixture();

function makeClient(stub: StubServer): ApiClient {
  return new ApiClient("http://stub", stub.fetch);
}

async function loadBoard(stub: StubServer) {
  const client = makeClient(stub);
  const info = await client.getProject(stub.projectId);
  return { client, state: projectLoaded(initialState(), info) };
}

describe("plan review flow", () => {
  it("renders six page cards for the six-page plan", async () => {
    const stub = new StubServer({ plan: PLAN });
    const { state } = await loadBoard(stub);
    const html = renderPlanCards(state.plan);
    const cards = html.match(/class="plan-card"/g) ?? [];
    expect(cards).toHaveLength(6);
    expect(html).toContain("Dr. Mira");
    expect(html).toContain("data-page=\"6\"");
  });

  it("refine round-trip changes only the edited page card", async () => {
    const refined = structuredClone(PLAN);
    refined.Story[2] = { ...refined.Story[2], Text: "A brand new page three." };
    const stub = new StubServer({ plan: PLAN, refineReply: refined });
    const { client, state } = await loadBoard(stub);

    const before = renderPlanCards(state.plan);
    const reply = await client.refinePlan(stub.projectId, "rewrite page 3");
    const after = renderPlanCards(reply.plan);

    const cardsBefore = before.split("<article").slice(1);
    const cardsAfter = after.split("<article").slice(1);
    expect(cardsAfter).toHaveLength(cardsBefore.length);
    const changed = cardsBefore
      .map((card, index) => (card === cardsAfter[index] ? null : index))
      .filter((index) => index !== null);
    expect(changed).toEqual([2]);
  });
});

describe("edit flow", () => {
  it("submitted edit request matches the wire-schema golden file", async () => {
    const stub = new StubServer({ plan: PLAN });
    const { client, state: loaded } = await loadBoard(stub);

    let state = setConcept(loaded, "woman");
    state = setEditPrompt(state, "a red lab coat");
    state = togglePage(state, 2);
    state = togglePage(state, 4);
    state = chooseInstance(state, 2, 1);

    const request = buildEditRequest(state);
    expect(request).toEqual(loadWireGolden());

    await client.submitEdit(stub.projectId, request);
    const submitted = stub.captured.find((c) => c.path.endsWith("/edits"));
    expect(submitted).toBeDefined();
    expect((submitted!.body as { request: unknown }).request).toEqual(loadWireGolden());
  });

  it("ambiguous detections show both candidates and the pick rides along", async () => {
    const preview: MaskPreviewFrame[] = [
      {
        index: 1,
        instances: [
          { instance_id: 0, confidence: 0.9, mask: "mask-a", selected: true },
          { instance_id: 1, confidence: 0.7, mask: "mask-b", selected: false },
        ],
        warning: null,
      },
    ];
    const stub = new StubServer({ plan: PLAN, maskPreview: preview });
    const { client, state: loaded } = await loadBoard(stub);

    let state = setConcept(loaded, "reindeer");
    state = setEditPrompt(state, "a golden reindeer");
    const response = await client.previewMasks(stub.projectId, state.concept);
    state = masksPreviewed(state, response.frames);

    const picker = renderInstancePicker(state);
    expect(picker.match(/class="instance-option/g)).toHaveLength(2);
    expect(picker).toContain('data-instance-id="0"');
    expect(picker).toContain('data-instance-id="1"');

    state = chooseInstance(state, 2, 1);
    await client.submitEdit(stub.projectId, buildEditRequest(state));
    const submitted = stub.captured.filter((c) => c.path.endsWith("/edits")).pop()!;
    const body = submitted.body as { request: { instance_overrides: Record<string, number> } };
    expect(body.request.instance_overrides).toEqual({ "2": 1 });
  });

  it("a finished job updates the board; undo restores the previous state", async () => {
    const stub = new StubServer({ plan: PLAN });
    const { client, state: loaded } = await loadBoard(stub);
    const templateHashes = loaded.frames.map((f) => f.hash);

    let state = setConcept(loaded, "woman");
    state = setEditPrompt(state, "a red lab coat");
    const job = await client.submitEdit(stub.projectId, buildEditRequest(state));
    const finished = await pollJob((id) => client.getJob(id), job.job_id, {
      intervalMs: 0,
      sleep: async () => {},
    });
    expect(finished.state).toBe("done");

    state = projectLoaded(state, await client.getProject(stub.projectId));
    expect(state.turns).toHaveLength(1);
    expect(state.frames.map((f) => f.hash)).not.toEqual(templateHashes);
    expect(state.frames.map((f) => f.hash)).toEqual(state.turns[0].after);

    const restored = projectLoaded(state, await client.undo(stub.projectId));
    expect(restored.frames.map((f) => f.hash)).toEqual(templateHashes);
    expect(restored.turns).toHaveLength(0);
    const boardHtml = renderBoard(restored, (h) => `/frames/${h}`);
    for (const hash of templateHashes) {
      expect(boardHtml).toContain(`/frames/${hash}`);
    }
  });

  it("a failed job leaves the board untouched and surfaces the error", async () => {
    const stub = new StubServer({ plan: PLAN, failEdits: "backend exploded" });
    const { client, state: loaded } = await loadBoard(stub);
    const before = renderBoard(loaded, (h) => `/frames/${h}`);

    let state = setConcept(loaded, "woman");
    state = setEditPrompt(state, "a red lab coat");
    const job = await client.submitEdit(stub.projectId, buildEditRequest(state));
    await expect(
      pollJob((id) => client.getJob(id), job.job_id, { intervalMs: 0, sleep: async () => {} }),
    ).rejects.toThrow("backend exploded");

    // the stub committed nothing; reloading projects the same board
    const reloaded = projectLoaded(state, await client.getProject(stub.projectId));
    expect(renderBoard(reloaded, (h) => `/frames/${h}`)).toBe(before);
  });
});
