// @vitest-environment jsdom
//
// Full stack: spawns the real rating service (uvicorn) on a scratch batch
// of 3 videos x 2 raters, then drives the actual form DOM through complete
// rater sessions and checks /api/eval/stats after each.

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, beforeEach, describe, expect, it } from "vitest";

import { createClient, type ApiClient } from "../src/api.js";
import { bootstrap } from "../src/main.js";
import {
  byId,
  clickScore,
  focusCriterion,
  installAppDom,
  playVideo,
  pressKey,
  submitButton,
} from "./helpers.js";

const CAPTIONS: Record<string, { Cause: string; Effect: string }> = {
  v00: { Cause: "a tractor plows the  field ", Effect: "dust rises behind it" },
  v01: { Cause: "rain falls on the street", Effect: "puddles form across café row" },
  v02: { Cause: "a chef chops onions fast", Effect: "tears run down his face" },
};

let service: ChildProcess;
let base: string;
let postCount = 0;
let client: ApiClient;

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.once("error", reject);
    probe.listen(0, "127.0.0.1", () => {
      const port = (probe.address() as { port: number }).port;
      probe.close(() => resolve(port));
    });
  });
}

async function waitForService(url: string, timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  let lastErr: unknown = null;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(url);
      if (res.ok) {
        return;
      }
    } catch (err) {
      lastErr = err;
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error(`service never came up at ${url}: ${lastErr}`);
}

beforeAll(async () => {
  const work = mkdtempSync(join(tmpdir(), "rating-e2e-"));
  const manifest = join(work, "manifest.jsonl");
  writeFileSync(
    manifest,
    Object.keys(CAPTIONS)
      .map((vid) =>
        JSON.stringify({
          video_id: vid,
          media_path: join(work, `${vid}.avi`),
          duration_s: 4.0,
          dataset_tag: "custom",
          split: "test",
        }),
      )
      .join("\n") + "\n",
  );
  const ctn = join(work, "ctn.json");
  writeFileSync(ctn, JSON.stringify(CAPTIONS));

  const port = await freePort();
  base = `http://127.0.0.1:${port}`;
  const config = join(work, "serve.json");
  writeFileSync(
    config,
    JSON.stringify({
      manifest,
      ctn,
      out_dir: join(work, "serve"),
      raters: ["ui_r1", "ui_r2"],
      port,
    }),
  );

  service = spawn("causalcap", ["humaneval-serve", "--config", config], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  service.stderr?.on("data", () => {}); // keep the pipe drained
  await waitForService(`${base}/api/eval/stats`, 30_000);

  // Count outgoing rating POSTs so duplicate submits cannot hide behind
  // the service's idempotent overwrite behaviour.
  client = createClient(base, (input, init) => {
    if (init?.method === "POST") {
      postCount += 1;
    }
    return fetch(input, init);
  });
}, 60_000);

afterAll(() => {
  service?.kill("SIGTERM");
});

beforeEach(() => {
  installAppDom();
});

async function stats(): Promise<any> {
  const res = await fetch(`${base}/api/eval/stats`);
  return res.json();
}

/** Rate the on-screen assignment: two criteria by mouse, one by keyboard. */
async function rateCurrent(
  controller: { pending: Promise<void> },
  scores: [number, number, number],
): Promise<void> {
  const button = submitButton();
  expect(button.disabled).toBe(true); // nothing scored yet

  clickScore("causal_accuracy", scores[0]);
  clickScore("temporal_coherence", scores[1]);
  expect(button.disabled).toBe(true); // third score still missing

  focusCriterion("relevance");
  pressKey(String(scores[2]));
  expect(button.disabled).toBe(true); // all scores set, clip never played

  playVideo();
  expect(button.disabled).toBe(false);

  button.click();
  await controller.pending;
}

describe("scripted rater sessions against the live service", () => {
  const r1Scores: Array<[number, number, number]> = [
    [5, 4, 3],
    [2, 5, 4],
    [5, 3, 4],
  ];

  it("rater one rates all three assignments through the form", async () => {
    const controller = bootstrap(document, client, "ui_r1");
    await controller.pending;

    for (const scores of r1Scores) {
      expect(byId("form-section").hidden).toBe(false);

      // The rendered caption must equal the service payload byte-for-byte.
      const vid = controller.getState().assignment!.video_id;
      expect(byId("cause").textContent).toBe(CAPTIONS[vid].Cause);
      expect(byId("effect").textContent).toBe(CAPTIONS[vid].Effect);

      const postsBefore = postCount;
      await rateCurrent(controller, scores);
      expect(postCount).toBe(postsBefore + 1);
    }

    expect(controller.getState().done).toBe(true);
    expect(byId("done-screen").hidden).toBe(false);
    expect(byId("done-text").textContent).toContain("3 videos (9 evaluations)");
  });

  it("reports three ratings, correct means, and no ICC for a lone rater", async () => {
    const body = await stats();
    expect(body.n_ratings).toBe(3);

    const mean = (idx: number) =>
      r1Scores.reduce((total, s) => total + s[idx], 0) / r1Scores.length;
    expect(body.criteria.causal_accuracy.mean).toBeCloseTo(mean(0), 6);
    expect(body.criteria.temporal_coherence.mean).toBeCloseTo(mean(1), 6);
    expect(body.criteria.relevance.mean).toBeCloseTo(mean(2), 6);

    // One rater cannot yield inter-rater agreement.
    expect(body.criteria.causal_accuracy.icc).toBeNull();
  });

  it("a second rater is blocked from submitting until the form is complete", async () => {
    const controller = bootstrap(document, client, "ui_r2");
    await controller.pending;

    const button = submitButton();
    clickScore("causal_accuracy", 4);
    clickScore("temporal_coherence", 4);
    clickScore("relevance", 4);
    expect(button.disabled).toBe(true); // played gate still closed
    playVideo();
    expect(button.disabled).toBe(false);

    button.click();
    await controller.pending;
    expect((await stats()).n_ratings).toBe(4);
  });

  it("ICC appears once two raters cover two complete videos", async () => {
    const controller = bootstrap(document, client, "ui_r2");
    await controller.pending;

    // ui_r2 already rated v00; one more shared video completes a 2x2 grid.
    await rateCurrent(controller, [3, 4, 5]);

    const body = await stats();
    expect(body.n_ratings).toBe(5);
    for (const criterion of ["causal_accuracy", "temporal_coherence", "relevance"]) {
      expect(typeof body.criteria[criterion].icc).toBe("number");
    }
    expect(typeof body.overall.mean).toBe("number");
  });
});
