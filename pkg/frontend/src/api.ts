import { apiBase } from "./config";

export interface Prediction {
  label: string;
  probabilities: Record<string, number>;
  model_version: string;
}

export class ApiError extends Error {
  constructor(
    public code: string,
    message: string,
    public status: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** POST the image as multipart field "image" and parse the prediction. */
export async function predictImage(file: File, base: string = apiBase()): Promise<Prediction> {
  const form = new FormData();
  form.append("image", file, file.name);
  let resp: Response;
  try {
    resp = await fetch(`${base}/api/v1/predict`, { method: "POST", body: form });
  } catch {
    throw new ApiError("network_error", "Could not reach the classification service.", 0);
  }
  const body = await resp.json().catch(() => null);
  if (!resp.ok) {
    const code = body?.error ?? "http_error";
    const message = body?.message ?? `Request failed with HTTP ${resp.status}.`;
    throw new ApiError(code, message, resp.status);
  }
  return body as Prediction;
}

export async function health(base: string = apiBase()): Promise<{ status: string; model_version: string }> {
  const resp = await fetch(`${base}/api/v1/health`);
  if (!resp.ok) throw new ApiError("http_error", `health check failed (${resp.status})`, resp.status);
  return resp.json();
}
