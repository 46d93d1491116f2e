import { describe, expect, it, vi } from "vitest";

import type { Prediction } from "../api";
import { formatPercent, renderApp, renderProbabilities, renderResult } from "../render";
import type { UiState } from "../state";

function prediction(partial: Partial<Prediction> = {}): Prediction {
  return {
    label: "parasitized",
    probabilities: { parasitized: 0.75, uninfected: 0.25 },
    model_version: "cafe01234567",
    ...partial,
  };
}

describe("formatPercent", () => {
  it("rounds to one decimal", () => {
    expect(formatPercent(0.75)).toBe("75.0%");
    expect(formatPercent(0.2549)).toBe("25.5%");
    expect(formatPercent(1)).toBe("100.0%");
  });
});

describe("renderProbabilities", () => {
  it("shows both classes with one-decimal percentages summing to ~100", () => {
    const node = renderProbabilities(prediction());
    const rows = [...node.querySelectorAll(".prob-row")];
    expect(rows.map((r) => r.querySelector(".prob-name")?.textContent)).toEqual([
      "parasitized",
      "uninfected",
    ]);
    const values = rows.map((r) => r.querySelector(".prob-value")?.textContent);
    expect(values).toEqual(["75.0%", "25.0%"]);
    const sum = values.reduce((acc, v) => acc + parseFloat(v!), 0);
    expect(Math.abs(sum - 100)).toBeLessThanOrEqual(0.1);
  });

  it("highlights the predicted class", () => {
    const node = renderProbabilities(prediction());
    const highlighted = [...node.querySelectorAll(".prob-row.predicted")];
    expect(highlighted).toHaveLength(1);
    expect(highlighted[0].getAttribute("data-class")).toBe("parasitized");
  });

  it("mirrors the server tie rule: 50/50 highlights parasitized", () => {
    const node = renderProbabilities(
      prediction({ label: "parasitized", probabilities: { parasitized: 0.5, uninfected: 0.5 } }),
    );
    const highlighted = node.querySelector(".prob-row.predicted");
    expect(highlighted?.getAttribute("data-class")).toBe("parasitized");
  });

  it("always follows the server label even against the local argmax", () => {
    // rounding (or anything else local) must never override the server
    const node = renderProbabilities(
      prediction({
        label: "uninfected",
        probabilities: { parasitized: 0.501, uninfected: 0.499 },
      }),
    );
    const highlighted = node.querySelector(".prob-row.predicted");
    expect(highlighted?.getAttribute("data-class")).toBe("uninfected");
  });
});

describe("renderResult", () => {
  it("displays label, both probabilities, and the model version", () => {
    const node = renderResult(prediction());
    expect(node.querySelector('[data-role="label"]')?.textContent).toBe("parasitized");
    expect(node.querySelectorAll(".prob-row")).toHaveLength(2);
    expect(node.querySelector('[data-role="model-version"]')?.textContent).toContain(
      "cafe01234567",
    );
  });
});

describe("renderApp", () => {
  function state(partial: Partial<UiState>): UiState {
    return {
      phase: "idle",
      file: null,
      fileMeta: null,
      prediction: null,
      error: null,
      ...partial,
    };
  }

  const noop = { onClassify: vi.fn(), onRetry: vi.fn(), onReset: vi.fn() };

  it("error screen shows the message and a wired retry button", () => {
    const root = document.createElement("div");
    const actions = { ...noop, onRetry: vi.fn() };
    renderApp(root, state({ phase: "error", error: "cannot decode image bytes" }), actions, null);
    expect(root.querySelector('[data-role="error"]')?.textContent).toBe(
      "cannot decode image bytes",
    );
    const retry = root.querySelector<HTMLButtonElement>('[data-action="retry"]');
    expect(retry).not.toBeNull();
    retry!.click();
    expect(actions.onRetry).toHaveBeenCalledOnce();
  });

  it("uploading screen disables the classify button", () => {
    const root = document.createElement("div");
    renderApp(root, state({ phase: "uploading" }), noop, null);
    const button = root.querySelector("button");
    expect(button?.disabled).toBe(true);
  });

  it("result screen contains the full prediction", () => {
    const root = document.createElement("div");
    renderApp(root, state({ phase: "result", prediction: prediction() }), noop, null);
    expect(root.querySelector('[data-role="label"]')).not.toBeNull();
    expect(root.querySelectorAll(".prob-row")).toHaveLength(2);
    expect(root.querySelector('[data-role="model-version"]')).not.toBeNull();
  });

  it("re-render replaces the previous screen", () => {
    const root = document.createElement("div");
    renderApp(root, state({ phase: "idle" }), noop, null);
    renderApp(root, state({ phase: "error", error: "x" }), noop, null);
    expect(root.querySelectorAll("[data-screen]")).toHaveLength(1);
    expect(root.querySelector("[data-screen]")?.getAttribute("data-screen")).toBe("error");
  });
});
