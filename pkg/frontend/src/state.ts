import type { Prediction } from "./api";
import { ApiError } from "./api";

export const MAX_UPLOAD_BYTES = 5 * 1024 * 1024;

export type Phase = "idle" | "preview" | "uploading" | "result" | "error";

export interface FileMeta {
  name: string;
  size: number;
  type: string;
}

export interface UiState {
  phase: Phase;
  file: File | null;
  fileMeta: FileMeta | null;
  prediction: Prediction | null;
  error: string | null;
}

export type PredictFn = (file: File) => Promise<Prediction>;
type Listener = (state: UiState) => void;

function isPng(file: File): boolean {
  // drag-and-drop sometimes delivers an empty MIME type; fall back to the name
  return file.type === "image/png" || (file.type === "" && file.name.toLowerCase().endsWith(".png"));
}

/**
 * The page's single state machine. One in-flight request at a time; every
 * error state offers retry without a reload (back to preview when a file is
 * still selected, otherwise to idle).
 */
export class UploadStore {
  private state: UiState = {
    phase: "idle",
    file: null,
    fileMeta: null,
    prediction: null,
    error: null,
  };
  private listeners: Listener[] = [];

  constructor(private predict: PredictFn) {}

  getState(): UiState {
    return this.state;
  }

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private setState(patch: Partial<UiState>): void {
    this.state = { ...this.state, ...patch };
    for (const fn of this.listeners) fn(this.state);
  }

  /** Pick a file (from the input or a drop). Pre-checks run here; an
   * oversized or non-PNG file never reaches the network. */
  selectFile(file: File): void {
    if (this.state.phase === "uploading") return; // no swaps mid-flight
    const meta = { name: file.name, size: file.size, type: file.type };
    if (!isPng(file)) {
      this.setState({
        phase: "error",
        file: null,
        fileMeta: meta,
        prediction: null,
        error: "Only PNG images are supported.",
      });
      return;
    }
    if (file.size > MAX_UPLOAD_BYTES) {
      this.setState({
        phase: "error",
        file: null,
        fileMeta: meta,
        prediction: null,
        error: `File is ${(file.size / 1048576).toFixed(1)} MiB; the limit is 5 MiB.`,
      });
      return;
    }
    this.setState({ phase: "preview", file, fileMeta: meta, prediction: null, error: null });
  }

  /** Upload the selected file and transition to result or error. */
  async classify(): Promise<void> {
    if (this.state.phase !== "preview" || !this.state.file) return;
    const file = this.state.file;
    this.setState({ phase: "uploading", error: null });
    try {
      const prediction = await this.predict(file);
      this.setState({ phase: "result", prediction });
    } catch (err) {
      const message =
        err instanceof ApiError ? err.message : "Unexpected error while classifying.";
      this.setState({ phase: "error", prediction: null, error: message });
    }
  }

  /** Leave the error state without reloading the page. */
  retry(): void {
    if (this.state.phase !== "error") return;
    if (this.state.file) {
      this.setState({ phase: "preview", error: null });
    } else {
      this.reset();
    }
  }

  /** Back to a blank page (also used for "classify another image"). */
  reset(): void {
    if (this.state.phase === "uploading") return;
    this.setState({ phase: "idle", file: null, fileMeta: null, prediction: null, error: null });
  }
}
