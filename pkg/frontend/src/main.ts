/**
 * DOM wiring for the rating form. All behaviour lives in state.ts and
 * api.ts; this module renders state and translates events into
 * transitions. One rater session per tab: the rater id comes from the
 * query string and all progress state is local, the server decides what
 * is pending.
 */

import { ApiError, createClient, type ApiClient, type RatingPayload } from "./api.js";
import {
  applyNext,
  beginSubmit,
  canSubmit,
  CRITERIA,
  evaluationCount,
  fetchFailed,
  initialState,
  markPlayed,
  scoreForKey,
  setScore,
  submitRejected,
  submitSucceeded,
  type Criterion,
  type RatingFormState,
} from "./state.js";

const CRITERION_LABELS: Record<Criterion, string> = {
  causal_accuracy: "Causal accuracy",
  temporal_coherence: "Temporal coherence",
  relevance: "Relevance",
};

export interface Controller {
  getState(): RatingFormState;
  /** Resolves when the most recently started request settles. */
  pending: Promise<void>;
}

function el<T extends HTMLElement>(doc: Document, id: string): T {
  const node = doc.getElementById(id);
  if (!node) {
    throw new Error(`missing #${id} in page template`);
  }
  return node as T;
}

/** Build one score fieldset: a legend plus six labelled radios (0..5). */
function buildCriterion(doc: Document, criterion: Criterion): HTMLFieldSetElement {
  const fieldset = doc.createElement("fieldset");
  fieldset.dataset.criterion = criterion;
  fieldset.tabIndex = 0;
  const legend = doc.createElement("legend");
  legend.textContent = `${CRITERION_LABELS[criterion]} (keys 0-5)`;
  fieldset.append(legend);
  for (let value = 0; value <= 5; value++) {
    const label = doc.createElement("label");
    const radio = doc.createElement("input");
    radio.type = "radio";
    radio.name = criterion;
    radio.value = String(value);
    label.append(radio, doc.createTextNode(` ${value}`));
    fieldset.append(label);
  }
  return fieldset;
}

/** Service error bodies arrive as {detail: string | [{msg}, ...]}. */
function validationMessage(detail: unknown): string {
  if (detail && typeof detail === "object" && "detail" in (detail as Record<string, unknown>)) {
    return validationMessage((detail as { detail: unknown }).detail);
  }
  if (typeof detail === "string") {
    return detail;
  }
  if (Array.isArray(detail)) {
    const msgs = detail
      .map((row) => (row && typeof row === "object" ? (row as { msg?: string }).msg : null))
      .filter((m): m is string => typeof m === "string");
    if (msgs.length > 0) {
      return msgs.join("; ");
    }
  }
  return "the service rejected this rating";
}

export function bootstrap(doc: Document, client: ApiClient, raterId: string): Controller {
  let state = initialState();
  let retry: () => void = () => {};
  let focusedCriterion: Criterion | null = null;

  const errorBanner = el<HTMLElement>(doc, "error-banner");
  const errorText = el<HTMLElement>(doc, "error-text");
  const retryButton = el<HTMLButtonElement>(doc, "retry");
  const doneScreen = el<HTMLElement>(doc, "done-screen");
  const doneText = el<HTMLElement>(doc, "done-text");
  const formSection = el<HTMLElement>(doc, "form-section");
  const video = el<HTMLVideoElement>(doc, "clip");
  const causeNode = el<HTMLElement>(doc, "cause");
  const effectNode = el<HTMLElement>(doc, "effect");
  const playHint = el<HTMLElement>(doc, "play-hint");
  const scoresForm = el<HTMLFormElement>(doc, "scores");
  const validationNode = el<HTMLElement>(doc, "validation");
  const submitButton = el<HTMLButtonElement>(doc, "submit");

  el<HTMLElement>(doc, "rater-label").textContent = `Rater: ${raterId}`;

  for (const criterion of CRITERIA) {
    scoresForm.append(buildCriterion(doc, criterion));
  }

  function render(): void {
    errorBanner.hidden = state.error === null;
    errorText.textContent = state.error ?? "";

    doneScreen.hidden = !state.done;
    if (state.done) {
      doneText.textContent =
        state.ratedCount > 0
          ? `You rated ${state.ratedCount} videos (${evaluationCount(state)} evaluations). Thank you.`
          : "No assignments remaining for this rater.";
    }

    formSection.hidden = state.assignment === null;
    if (state.assignment) {
      // Caption text must match the API payload byte-for-byte, so it goes
      // through textContent with no trimming or markup.
      causeNode.textContent = state.assignment.cause;
      effectNode.textContent = state.assignment.effect;
    }

    playHint.hidden = state.played;
    for (const criterion of CRITERIA) {
      const score = state.scores[criterion];
      const radios = scoresForm.querySelectorAll<HTMLInputElement>(`input[name="${criterion}"]`);
      radios.forEach((radio) => {
        radio.checked = score !== null && radio.value === String(score);
      });
    }
    validationNode.hidden = state.validation === null;
    validationNode.textContent = state.validation ?? "";
    submitButton.disabled = !canSubmit(state);
  }

  function showAssignment(): void {
    if (!state.assignment) {
      return;
    }
    // Assigning src restarts the media load; no explicit load() needed.
    video.src = client.mediaUrl(state.assignment.media_url);
    render();
  }

  async function loadNext(): Promise<void> {
    try {
      const response = await client.fetchNext(raterId);
      state = applyNext(state, response);
      showAssignment();
      render();
    } catch (err) {
      retry = () => {
        controller.pending = loadNext();
      };
      state = fetchFailed(state, errorLine(err));
      render();
    }
  }

  function errorLine(err: unknown): string {
    if (err instanceof ApiError) {
      return `service error ${err.status}: ${validationMessage(err.detail)}`;
    }
    return "Cannot reach the rating service. Check the connection and retry.";
  }

  async function doSubmit(): Promise<void> {
    const latched = beginSubmit(state);
    const assignment = state.assignment;
    if (latched === null || assignment === null) {
      return; // disabled, incomplete, or a submit is already in flight
    }
    state = latched;
    render();
    const payload: RatingPayload = {
      rater_id: raterId,
      video_id: assignment.video_id,
      causal_accuracy: state.scores.causal_accuracy as number,
      temporal_coherence: state.scores.temporal_coherence as number,
      relevance: state.scores.relevance as number,
    };
    try {
      await client.submitRating(payload);
      state = submitSucceeded(state);
      await loadNext();
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        state = submitRejected(state, validationMessage(err.detail));
      } else {
        retry = () => {
          controller.pending = doSubmit();
        };
        state = fetchFailed(state, errorLine(err));
      }
      render();
    }
  }

  video.addEventListener("play", () => {
    state = markPlayed(state);
    render();
  });

  scoresForm.addEventListener("focusin", (event) => {
    const fieldset = (event.target as HTMLElement).closest("fieldset");
    focusedCriterion = (fieldset?.dataset.criterion as Criterion | undefined) ?? null;
  });

  scoresForm.addEventListener("change", (event) => {
    const input = event.target as HTMLInputElement;
    if (input.type === "radio" && (CRITERIA as readonly string[]).includes(input.name)) {
      state = setScore(state, input.name as Criterion, Number(input.value));
      render();
    }
  });

  doc.addEventListener("keydown", (event) => {
    const score = scoreForKey(event.key);
    if (score === null || focusedCriterion === null) {
      return;
    }
    state = setScore(state, focusedCriterion, score);
    render();
  });

  submitButton.addEventListener("click", (event) => {
    event.preventDefault();
    controller.pending = doSubmit();
  });

  retryButton.addEventListener("click", () => {
    retry();
  });

  const controller: Controller = {
    getState: () => state,
    pending: loadNext(),
  };
  render();
  return controller;
}

/** Browser entry point: ?rater=ID is required, ?api=URL overrides the
 *  service origin (defaults to the page's own origin). */
export function autoboot(doc: Document): Controller | null {
  const root = doc.getElementById("app");
  if (!root || !root.hasAttribute("data-autoboot")) {
    return null;
  }
  const params = new URLSearchParams(doc.defaultView?.location.search ?? "");
  const raterId = params.get("rater");
  const setup = doc.getElementById("setup");
  if (!raterId) {
    if (setup) {
      setup.hidden = false;
    }
    return null;
  }
  const apiBase = params.get("api") ?? doc.defaultView?.location.origin ?? "";
  return bootstrap(doc, createClient(apiBase), raterId);
}

if (typeof document !== "undefined") {
  autoboot(document);
}
