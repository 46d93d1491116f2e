// Runtime configuration: set the API origin here when the service is not
// reachable from the page's own origin (remember to enable CORS for it).
// window.MALARIANET_API = "http://127.0.0.1:8000";
