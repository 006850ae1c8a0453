// @vitest-environment jsdom

import { beforeEach, describe, expect, it } from "vitest";

import { ApiError, type ApiClient, type NextResponse, type RatingPayload } from "../src/api.js";
import { bootstrap, type Controller } from "../src/main.js";
import {
  byId,
  clickScore,
  focusCriterion,
  installAppDom,
  playVideo,
  pressKey,
  submitButton,
} from "./helpers.js";

function assignment(videoId: string, cause: string, effect: string): NextResponse {
  return { done: false, video_id: videoId, media_url: `/media/${videoId}`, cause, effect };
}

const DONE: NextResponse = { done: true, video_id: null, media_url: null, cause: null, effect: null };

/** Scripted ApiClient: next responses come off a queue, submits are recorded. */
function stubClient(nextQueue: NextResponse[]) {
  const submitted: RatingPayload[] = [];
  let failNextWith: unknown = null;
  let submitGate: { promise: Promise<void>; open: () => void } | null = null;
  let rejectSubmitWith: unknown = null;

  const client: ApiClient = {
    async fetchNext() {
      if (failNextWith !== null) {
        const err = failNextWith;
        failNextWith = null;
        throw err;
      }
      const next = nextQueue.shift();
      if (!next) {
        throw new Error("stub queue exhausted");
      }
      return next;
    },
    async submitRating(payload) {
      if (submitGate) {
        await submitGate.promise;
      }
      if (rejectSubmitWith !== null) {
        const err = rejectSubmitWith;
        rejectSubmitWith = null;
        throw err;
      }
      submitted.push(payload);
      return { accepted: true, n_ratings: submitted.length };
    },
    async fetchStats() {
      return {};
    },
    mediaUrl: (path) => `http://svc${path}`,
  };

  return {
    client,
    submitted,
    failNextOnce(err: unknown) {
      failNextWith = err;
    },
    rejectSubmitOnce(err: unknown) {
      rejectSubmitWith = err;
    },
    holdSubmits() {
      let open!: () => void;
      const promise = new Promise<void>((resolve) => (open = resolve));
      submitGate = { promise, open: () => { submitGate = null; open(); } };
      return submitGate;
    },
  };
}

function fillAllScores(): void {
  clickScore("causal_accuracy", 5);
  clickScore("temporal_coherence", 4);
  clickScore("relevance", 3);
}

describe("form wiring", () => {
  beforeEach(() => {
    installAppDom();
  });

  it("enables submit only after three scores and one playback", async () => {
    const stub = stubClient([assignment("v00", "c", "e")]);
    const controller = bootstrap(document, stub.client, "r1");
    await controller.pending;

    const button = submitButton();
    expect(button.disabled).toBe(true);
    clickScore("causal_accuracy", 5);
    clickScore("temporal_coherence", 4);
    expect(button.disabled).toBe(true);
    clickScore("relevance", 3);
    expect(button.disabled).toBe(true); // clip not played yet
    expect(byId("play-hint").hidden).toBe(false);
    playVideo();
    expect(byId("play-hint").hidden).toBe(true);
    expect(button.disabled).toBe(false);
  });

  it("renders the caption byte-for-byte", async () => {
    const cause = "  leading and  double spaces\tkept ";
    const effect = "café effect → unchanged";
    const stub = stubClient([assignment("v00", cause, effect)]);
    const controller = bootstrap(document, stub.client, "r1");
    await controller.pending;

    expect(byId("cause").textContent).toBe(cause);
    expect(byId("effect").textContent).toBe(effect);
  });

  it("scores the focused criterion from the keyboard", async () => {
    const stub = stubClient([assignment("v00", "c", "e")]);
    const controller = bootstrap(document, stub.client, "r1");
    await controller.pending;

    pressKey("4"); // nothing focused yet: ignored
    expect(controller.getState().scores.temporal_coherence).toBeNull();

    focusCriterion("temporal_coherence");
    pressKey("4");
    expect(controller.getState().scores.temporal_coherence).toBe(4);
    const checked = document.querySelector<HTMLInputElement>(
      'fieldset[data-criterion="temporal_coherence"] input:checked',
    );
    expect(checked?.value).toBe("4");

    pressKey("9"); // off-scale: ignored
    expect(controller.getState().scores.temporal_coherence).toBe(4);
  });

  it("submits once for a rapid double click", async () => {
    const stub = stubClient([assignment("v00", "c", "e"), DONE]);
    const controller = bootstrap(document, stub.client, "r1");
    await controller.pending;
    fillAllScores();
    playVideo();

    const gate = stub.holdSubmits(); // keeps the first submit in flight
    submitButton().click();
    const firstOp = controller.pending;
    submitButton().click(); // latch: beginSubmit refuses while submitting
    gate.open();
    await firstOp;
    await controller.pending;

    expect(stub.submitted).toHaveLength(1);
    expect(controller.getState().done).toBe(true);
  });

  it("surfaces a 422 inline and keeps the assignment", async () => {
    const stub = stubClient([assignment("v00", "c", "e")]);
    const controller = bootstrap(document, stub.client, "r1");
    await controller.pending;
    fillAllScores();
    playVideo();

    stub.rejectSubmitOnce(new ApiError(422, { detail: [{ msg: "score out of range" }] }));
    submitButton().click();
    await controller.pending;

    const validation = byId("validation");
    expect(validation.hidden).toBe(false);
    expect(validation.textContent).toContain("score out of range");
    expect(controller.getState().submitting).toBe(false);
    expect(byId("cause").textContent).toBe("c"); // still on the same assignment
    expect(submitButton().disabled).toBe(false); // rater can correct and retry
  });

  it("shows a retryable banner when the service is unreachable", async () => {
    const stub = stubClient([assignment("v00", "c", "e")]);
    stub.failNextOnce(new TypeError("fetch failed"));
    const controller = bootstrap(document, stub.client, "r1");
    await controller.pending;

    const banner = byId("error-banner");
    expect(banner.hidden).toBe(false);
    expect(byId("error-text").textContent).toContain("retry");

    byId<HTMLButtonElement>("retry").click();
    await controller.pending;
    expect(banner.hidden).toBe(true);
    expect(byId("cause").textContent).toBe("c");
  });

  it("shows the completion screen with the evaluation count", async () => {
    const stub = stubClient([assignment("v00", "c", "e"), DONE]);
    const controller = bootstrap(document, stub.client, "r1");
    await controller.pending;
    fillAllScores();
    playVideo();
    submitButton().click();
    await controller.pending;

    expect(byId("done-screen").hidden).toBe(false);
    expect(byId("done-text").textContent).toContain("1 videos (3 evaluations)");
    expect(byId("form-section").hidden).toBe(true);
  });

  it("tells an already finished rater there is nothing to do", async () => {
    const stub = stubClient([DONE]);
    const controller = bootstrap(document, stub.client, "r1");
    await controller.pending;

    expect(byId("done-screen").hidden).toBe(false);
    expect(byId("done-text").textContent).toContain("No assignments remaining");
  });
});
