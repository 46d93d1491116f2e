import type { Prediction } from "./api";
import type { UiState } from "./state";

export const CLASS_ORDER = ["parasitized", "uninfected"] as const;

export function formatPercent(p: number): string {
  return `${(p * 100).toFixed(1)}%`;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

/**
 * Two labeled bars with one-decimal percentages. The highlighted row is the
 * server's label — the server is the single source of truth, even when the
 * rounded percentages would argue otherwise.
 */
export function renderProbabilities(prediction: Prediction): HTMLElement {
  const wrap = el("div", "probabilities");
  for (const name of CLASS_ORDER) {
    const p = prediction.probabilities[name] ?? 0;
    const row = el("div", "prob-row" + (name === prediction.label ? " predicted" : ""));
    row.dataset.class = name;
    row.appendChild(el("span", "prob-name", name));
    const track = el("div", "prob-track");
    const bar = el("div", "prob-bar");
    bar.style.width = `${(p * 100).toFixed(1)}%`;
    track.appendChild(bar);
    row.appendChild(track);
    row.appendChild(el("span", "prob-value", formatPercent(p)));
    wrap.appendChild(row);
  }
  return wrap;
}

export function renderResult(prediction: Prediction): HTMLElement {
  const wrap = el("div", "result");
  const verdict = el("div", `verdict verdict-${prediction.label}`, prediction.label);
  verdict.dataset.role = "label";
  wrap.appendChild(verdict);
  wrap.appendChild(renderProbabilities(prediction));
  const version = el("div", "model-version", `model ${prediction.model_version}`);
  version.dataset.role = "model-version";
  wrap.appendChild(version);
  return wrap;
}

export interface Actions {
  onClassify(): void;
  onRetry(): void;
  onReset(): void;
}

/** Full re-render of the app container from the current state. */
export function renderApp(
  root: HTMLElement,
  state: UiState,
  actions: Actions,
  previewUrl: string | null,
): void {
  root.querySelectorAll("[data-screen]").forEach((n) => n.remove());
  const screen = el("div");
  screen.dataset.screen = state.phase;

  const dropHint = "Drag a cell image here or use the file picker.";
  switch (state.phase) {
    case "idle": {
      screen.appendChild(el("p", "hint", dropHint));
      break;
    }
    case "preview": {
      if (previewUrl) {
        const img = el("img", "preview-image");
        img.src = previewUrl;
        img.alt = state.fileMeta?.name ?? "selected cell image";
        screen.appendChild(img);
      }
      screen.appendChild(
        el("p", "file-meta", `${state.fileMeta?.name} (${state.fileMeta?.size} bytes)`),
      );
      const btn = el("button", "primary", "Classify");
      btn.dataset.action = "classify";
      btn.addEventListener("click", actions.onClassify);
      screen.appendChild(btn);
      break;
    }
    case "uploading": {
      screen.appendChild(el("p", "hint", "Classifying…"));
      const btn = el("button", "primary", "Classify");
      btn.disabled = true; // one request at a time
      screen.appendChild(btn);
      break;
    }
    case "result": {
      if (state.prediction) screen.appendChild(renderResult(state.prediction));
      const again = el("button", "secondary", "Classify another image");
      again.dataset.action = "reset";
      again.addEventListener("click", actions.onReset);
      screen.appendChild(again);
      break;
    }
    case "error": {
      const msg = el("p", "error-message", state.error ?? "Something went wrong.");
      msg.dataset.role = "error";
      screen.appendChild(msg);
      const retry = el("button", "primary", "Retry");
      retry.dataset.action = "retry";
      retry.addEventListener("click", actions.onRetry);
      screen.appendChild(retry);
      break;
    }
  }
  root.appendChild(screen);
}
