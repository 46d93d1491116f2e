import { predictImage } from "./api";
import { renderApp } from "./render";
import { UploadStore } from "./state";

const store = new UploadStore(predictImage);
const root = document.getElementById("app")!;
const dropZone = document.getElementById("drop-zone")!;
const fileInput = document.getElementById("file-input") as HTMLInputElement;

let previewUrl: string | null = null;

function updatePreviewUrl(): void {
  const { file, phase } = store.getState();
  if (previewUrl) {
    URL.revokeObjectURL(previewUrl);
    previewUrl = null;
  }
  if (file && (phase === "preview" || phase === "uploading")) {
    previewUrl = typeof URL.createObjectURL === "function" ? URL.createObjectURL(file) : null;
  }
}

const actions = {
  onClassify: () => void store.classify(),
  onRetry: () => store.retry(),
  onReset: () => store.reset(),
};

store.subscribe((state) => {
  updatePreviewUrl();
  renderApp(root, state, actions, previewUrl);
  dropZone.classList.toggle("busy", state.phase === "uploading");
});

fileInput.addEventListener("change", () => {
  if (fileInput.files && fileInput.files.length > 0) {
    store.selectFile(fileInput.files[0]);
    fileInput.value = "";
  }
});

dropZone.addEventListener("dragover", (e) => {
  e.preventDefault();
  dropZone.classList.add("dragging");
});
dropZone.addEventListener("dragleave", () => dropZone.classList.remove("dragging"));
dropZone.addEventListener("drop", (e) => {
  e.preventDefault();
  dropZone.classList.remove("dragging");
  const file = e.dataTransfer?.files?.[0];
  if (file) store.selectFile(file);
});

renderApp(root, store.getState(), actions, previewUrl);
