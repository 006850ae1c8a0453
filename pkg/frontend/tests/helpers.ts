import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

/** Install the real page markup (the <main id="app"> subtree) into jsdom. */
export function installAppDom(): void {
  const here = dirname(fileURLToPath(import.meta.url));
  const html = readFileSync(join(here, "..", "index.html"), "utf-8");
  const match = html.match(/<main id="app"[\s\S]*<\/main>/);
  if (!match) {
    throw new Error("index.html lost its <main id=\"app\"> root");
  }
  document.body.innerHTML = match[0];
}

export function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing #${id}`);
  }
  return node as T;
}

/** Click the radio for `value` inside the criterion's fieldset. */
export function clickScore(criterion: string, value: number): void {
  const radio = document.querySelector<HTMLInputElement>(
    `fieldset[data-criterion="${criterion}"] input[value="${value}"]`,
  );
  if (!radio) {
    throw new Error(`no radio ${criterion}=${value}`);
  }
  radio.click();
}

export function pressKey(key: string): void {
  document.dispatchEvent(new KeyboardEvent("keydown", { key, bubbles: true }));
}

export function focusCriterion(criterion: string): void {
  const fieldset = document.querySelector<HTMLElement>(
    `fieldset[data-criterion="${criterion}"]`,
  );
  if (!fieldset) {
    throw new Error(`no fieldset for ${criterion}`);
  }
  fieldset.focus();
}

export function playVideo(): void {
  byId<HTMLVideoElement>("clip").dispatchEvent(new Event("play"));
}

export function submitButton(): HTMLButtonElement {
  return byId<HTMLButtonElement>("submit");
}
