/** API base URL resolution: runtime config file first, then build-time env. */
export function apiBase(): string {
  const runtime = (window as unknown as { MALARIANET_API?: string }).MALARIANET_API;
  if (runtime) return runtime.replace(/\/$/, "");
  const buildTime = import.meta.env?.VITE_API_BASE as string | undefined;
  return (buildTime ?? "").replace(/\/$/, "");
}
