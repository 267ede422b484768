// Browser entry point: connect the session client to the page over a real
// WebSocket against the serving host.

import { SessionClient, Transport } from "./client.js";
import { ChatView } from "./ui.js";

function wsTransport(url: string, client: SessionClient): Transport {
  const socket = new WebSocket(url);
  socket.addEventListener("message", (evt) => client.handleRaw(String(evt.data)));
  socket.addEventListener("close", () => {
    if (client.state.phase !== "ended") {
      client.state.lastError = "connection lost";
    }
  });
  return {
    send: (data) => {
      if (socket.readyState === WebSocket.OPEN) socket.send(data);
      else socket.addEventListener("open", () => socket.send(data), { once: true });
    },
    close: () => socket.close(),
  };
}

async function postJson(path: string, body: unknown): Promise<boolean> {
  const res = await fetch(path, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  });
  return res.ok;
}

function start(): void {
  const root = document.getElementById("app");
  if (root === null) return;
  const client = new SessionClient();
  const view = new ChatView(root, client, postJson);
  const proto = location.protocol === "https:" ? "wss" : "ws";
  client.attach(wsTransport(`${proto}://${location.host}/ws`, client));
  view.render();
  setInterval(() => view.render(), 1000); // countdown + cooldown refresh
}

start();
