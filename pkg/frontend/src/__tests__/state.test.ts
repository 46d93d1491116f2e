import { describe, expect, it, vi } from "vitest";

import { ApiError, type Prediction } from "../api";
import { MAX_UPLOAD_BYTES, UploadStore, type Phase } from "../state";

const PREDICTION: Prediction = {
  label: "parasitized",
  probabilities: { parasitized: 0.83, uninfected: 0.17 },
  model_version: "deadbeef0123",
};

function pngFile(name = "cell.png", bytes = 64): File {
  return new File([new Uint8Array(bytes)], name, { type: "image/png" });
}

describe("upload flow", () => {
  it("runs idle -> preview -> uploading -> result and keeps the server's answer", async () => {
    const predict = vi.fn().mockResolvedValue(PREDICTION);
    const store = new UploadStore(predict);
    const phases: Phase[] = [store.getState().phase];
    store.subscribe((s) => phases.push(s.phase));

    store.selectFile(pngFile());
    await store.classify();

    expect(phases).toEqual(["idle", "preview", "uploading", "result"]);
    const state = store.getState();
    expect(state.prediction).toEqual(PREDICTION);
    expect(predict).toHaveBeenCalledOnce();
  });

  it("renders the error phase with retry on a server decode_error", async () => {
    const predict = vi
      .fn()
      .mockRejectedValueOnce(new ApiError("decode_error", "cannot decode image bytes", 400))
      .mockResolvedValueOnce(PREDICTION);
    const store = new UploadStore(predict);

    store.selectFile(pngFile());
    await store.classify();
    expect(store.getState().phase).toBe("error");
    expect(store.getState().error).toBe("cannot decode image bytes");

    // retry leads back to preview (no reload) and the flow still completes
    store.retry();
    expect(store.getState().phase).toBe("preview");
    await store.classify();
    expect(store.getState().phase).toBe("result");
  });

  it("blocks oversized files client-side without any request", () => {
    const predict = vi.fn();
    const store = new UploadStore(predict);
    store.selectFile(pngFile("huge.png", MAX_UPLOAD_BYTES + 1));
    expect(store.getState().phase).toBe("error");
    expect(store.getState().error).toMatch(/5 MiB/);
    expect(predict).not.toHaveBeenCalled();
  });

  it("blocks non-PNG files client-side without any request", () => {
    const predict = vi.fn();
    const store = new UploadStore(predict);
    store.selectFile(new File(["x"], "cell.jpg", { type: "image/jpeg" }));
    expect(store.getState().phase).toBe("error");
    expect(store.getState().error).toMatch(/PNG/);
    expect(predict).not.toHaveBeenCalled();
  });

  it("accepts a drag-dropped .png with an empty MIME type", () => {
    const store = new UploadStore(vi.fn());
    store.selectFile(new File(["x"], "Cell_001.PNG", { type: "" }));
    expect(store.getState().phase).toBe("preview");
  });

  it("network failure lands in error with a retry path", async () => {
    const predict = vi.fn().mockRejectedValue(new ApiError("network_error", "Could not reach the classification service.", 0));
    const store = new UploadStore(predict);
    store.selectFile(pngFile());
    await store.classify();
    expect(store.getState().phase).toBe("error");
    store.retry();
    expect(store.getState().phase).toBe("preview");
  });

  it("allows only one request in flight", async () => {
    let release!: (p: Prediction) => void;
    const gate = new Promise<Prediction>((resolve) => (release = resolve));
    const predict = vi.fn().mockReturnValue(gate);
    const store = new UploadStore(predict);

    store.selectFile(pngFile());
    const first = store.classify();
    expect(store.getState().phase).toBe("uploading");
    await store.classify(); // second call must be a no-op
    store.selectFile(pngFile("other.png")); // swapping mid-flight is ignored too
    expect(predict).toHaveBeenCalledOnce();

    release(PREDICTION);
    await first;
    expect(store.getState().phase).toBe("result");
  });

  it("has no dead-end phases", async () => {
    // error without a file -> retry returns to idle
    const store = new UploadStore(vi.fn().mockResolvedValue(PREDICTION));
    store.selectFile(new File(["x"], "nope.gif", { type: "image/gif" }));
    expect(store.getState().phase).toBe("error");
    expect(store.getState().file).toBeNull();
    store.retry();
    expect(store.getState().phase).toBe("idle");

    // result -> reset returns to idle; idle -> select works again
    store.selectFile(pngFile());
    await store.classify();
    expect(store.getState().phase).toBe("result");
    store.reset();
    expect(store.getState().phase).toBe("idle");
    store.selectFile(pngFile());
    expect(store.getState().phase).toBe("preview");
  });
});
