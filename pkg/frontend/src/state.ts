/**
 * Pure form state for a single rater session. No DOM, no network: every
 * transition takes a state and returns a new one, so the invariants
 * (submit gating, the submitting latch) are testable in isolation.
 */

import type { Assignment, NextResponse } from "./api.js";

export const CRITERIA = ["causal_accuracy", "temporal_coherence", "relevance"] as const;

export type Criterion = (typeof CRITERIA)[number];

export type Scores = Record<Criterion, number | null>;

export interface RatingFormState {
  assignment: Assignment | null;
  scores: Scores;
  submitting: boolean;
  /** The clip must have been played at least once before submit enables. */
  played: boolean;
  /** Terminal: the server has no assignments left for this rater. */
  done: boolean;
  /** Videos rated this session; the completion screen reports x3 evaluations. */
  ratedCount: number;
  /** Retryable fetch failure, shown as a banner. */
  error: string | null;
  /** Server-side validation message, shown inline next to the form. */
  validation: string | null;
}

export function initialState(): RatingFormState {
  return {
    assignment: null,
    scores: emptyScores(),
    submitting: false,
    played: false,
    done: false,
    ratedCount: 0,
    error: null,
    validation: null,
  };
}

export function emptyScores(): Scores {
  return { causal_accuracy: null, temporal_coherence: null, relevance: null };
}

/** Submit is allowed only with a live assignment, all three scores set,
 *  the clip played at least once, and no submit already in flight. */
export function canSubmit(state: RatingFormState): boolean {
  return (
    state.assignment !== null &&
    !state.submitting &&
    state.played &&
    CRITERIA.every((c) => state.scores[c] !== null)
  );
}

export function setScore(
  state: RatingFormState,
  criterion: Criterion,
  value: number,
): RatingFormState {
  if (!Number.isInteger(value) || value < 0 || value > 5) {
    return state; // out-of-scale input is ignored, not an error state
  }
  return { ...state, scores: { ...state.scores, [criterion]: value } };
}

export function markPlayed(state: RatingFormState): RatingFormState {
  return state.played ? state : { ...state, played: true };
}

/** Fold a /next response into the form; resets per-assignment fields. */
export function applyNext(state: RatingFormState, response: NextResponse): RatingFormState {
  if (response.done) {
    return { ...state, assignment: null, done: true, error: null, validation: null };
  }
  return {
    ...state,
    assignment: {
      video_id: response.video_id as string,
      media_url: response.media_url as string,
      cause: response.cause as string,
      effect: response.effect as string,
    },
    scores: emptyScores(),
    submitting: false,
    played: false,
    done: false,
    error: null,
    validation: null,
  };
}

/** Engage the latch. Returns null when submit is not currently allowed,
 *  which is what suppresses a second click while one is in flight. */
export function beginSubmit(state: RatingFormState): RatingFormState | null {
  if (!canSubmit(state)) {
    return null;
  }
  return { ...state, submitting: true, validation: null };
}

export function submitSucceeded(state: RatingFormState): RatingFormState {
  return { ...state, submitting: false, ratedCount: state.ratedCount + 1 };
}

export function submitRejected(state: RatingFormState, message: string): RatingFormState {
  return { ...state, submitting: false, validation: message };
}

export function fetchFailed(state: RatingFormState, message: string): RatingFormState {
  return { ...state, submitting: false, error: message };
}

/** "0".."5" on a focused criterion scores it; anything else is ignored. */
export function scoreForKey(key: string): number | null {
  return /^[0-5]$/.test(key) ? Number(key) : null;
}

/** One video contributes one score per criterion. */
export function evaluationCount(state: RatingFormState): number {
  return state.ratedCount * CRITERIA.length;
}
