/** Browser entry point: wires the session to a minimal DOM.
 *
 * All behavior lives in session.ts / viewmodel.ts; this file only renders
 * state and forwards events, so it needs no tests of its own.
 */

import { ApiClient } from "./api.js";
import { DraftStore } from "./drafts.js";
import { Session } from "./session.js";
import type { Stage } from "./types.js";
import { keyToAction, toggleSelection } from "./viewmodel.js";

function requireInput(id: string): HTMLInputElement {
  const el = document.getElementById(id);
  if (!(el instanceof HTMLInputElement)) throw new Error(`missing #${id}`);
  return el;
}

export function boot(root: HTMLElement): void {
  const baseUrl = requireInput("base-url").value;
  const token = requireInput("token").value;
  const stage = requireInput("stage").value as Stage;

  const api = new ApiClient(baseUrl, token);
  const drafts = new DraftStore(window.localStorage);
  const session = new Session(api, drafts, stage);
  let focus = 0;

  function render(): void {
    root.replaceChildren();
    const state = session.state;
    if (state.banner !== null) {
      const banner = document.createElement("div");
      banner.className = "banner";
      banner.textContent = state.banner;
      root.appendChild(banner);
    }
    if (state.status === "empty") {
      root.appendChild(document.createTextNode("No open tasks for this stage."));
      return;
    }
    if (state.view === null) return;

    const guide = document.createElement("p");
    guide.textContent = state.view.guideline;
    root.appendChild(guide);

    state.view.controls.forEach((control, i) => {
      const row = document.createElement("div");
      row.className = i === focus ? "control focused" : "control";
      const value = state.values.get(control.key);
      row.textContent = `${control.heading} — ${control.detail} [${
        value === undefined ? "unset" : JSON.stringify(value)
      }]`;
      if (control.kind === "multiselect") {
        for (const choice of control.choices ?? []) {
          const btn = document.createElement("button");
          btn.textContent = choice;
          btn.onclick = () => {
            const ids = toggleSelection(value?.matched_passage_ids, choice);
            session.setLabel(control.key, { matched_passage_ids: ids });
            render();
          };
          row.appendChild(btn);
        }
      }
      row.onclick = () => {
        focus = i;
        render();
      };
      root.appendChild(row);
    });

    const submit = document.createElement("button");
    submit.textContent = "Submit";
    submit.disabled = !session.complete;
    submit.onclick = () => {
      void session.submit().then(() => {
        focus = 0;
        render();
      });
    };
    root.appendChild(submit);
  }

  document.addEventListener("keydown", (event) => {
    const view = session.state.view;
    if (view === null) return;
    const control = view.controls[focus];
    if (control === undefined) return;
    const action = keyToAction(control, event.key);
    if (action === null) return;
    session.setLabel(control.key, action.value);
    if (action.advance && focus < view.controls.length - 1) focus += 1;
    render();
  });

  void session.claimNext().then(render);
}

if (typeof document !== "undefined") {
  const root = document.getElementById("app");
  if (root !== null) boot(root);
}
