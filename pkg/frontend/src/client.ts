// Session state machine. Transport-agnostic so tests can drive it with a
// fake socket; the browser wires in a real WebSocket (see main.ts).

import {
  PairedEvent,
  Rating,
  ServerEvent,
  encodeClientEvent,
  parseServerEvent,
  validRating,
} from "./protocol.js";

export interface Transport {
  send(data: string): void;
  close(): void;
}

export interface Message {
  who: "you" | "partner";
  text: string;
  at: number;
}

export type Phase = "connecting" | "waiting" | "playing" | "ended";

// Matches the server's throttle; the local cooldown must never be shorter.
export const SELECT_COOLDOWN_MS = 10_000;
const TYPING_VISIBLE_MS = 3_000;

export interface ClientState {
  phase: Phase;
  side: "A" | "B" | null;
  attributes: string[];
  kb: Record<string, string>[];
  deadlineAt: number | null;
  messages: Message[];
  partnerTypingUntil: number;
  cooldownUntil: number;
  selectedIndex: number | null;
  outcome: string | null;
  transcriptId: string | null;
  lastError: string | null;
}

export class SessionClient {
  state: ClientState;
  private transport: Transport | null = null;
  private listeners: Array<(s: ClientState) => void> = [];
  private now: () => number;

  constructor(now: () => number = () => Date.now()) {
    this.now = now;
    this.state = {
      phase: "connecting",
      side: null,
      attributes: [],
      kb: [],
      deadlineAt: null,
      messages: [],
      partnerTypingUntil: 0,
      cooldownUntil: 0,
      selectedIndex: null,
      outcome: null,
      transcriptId: null,
      lastError: null,
    };
  }

  attach(transport: Transport): void {
    this.transport = transport;
    this.send({ type: "join" });
  }

  onChange(fn: (s: ClientState) => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  private send(evt: Parameters<typeof encodeClientEvent>[0]): void {
    this.transport?.send(encodeClientEvent(evt));
  }

  handleRaw(raw: string): void {
    const evt = parseServerEvent(raw);
    if (evt === null) return;
    this.handle(evt);
  }

  handle(evt: ServerEvent): void {
    switch (evt.type) {
      case "joined":
        break;
      case "waiting":
        this.state.phase = "waiting";
        break;
      case "paired":
        this.applyPaired(evt);
        break;
      case "partner_event":
        if (evt.kind === "typing") {
          this.state.partnerTypingUntil = this.now() + TYPING_VISIBLE_MS;
        } else if (evt.kind === "utterance" && typeof evt.text === "string") {
          this.state.partnerTypingUntil = 0;
          this.state.messages.push({ who: "partner", text: evt.text, at: this.now() });
        }
        break;
      case "select_ack":
        this.state.selectedIndex = evt.item_index;
        break;
      case "select_rejected":
        // trust the server: restart the local cooldown from its clock
        this.state.cooldownUntil = Math.max(
          this.state.cooldownUntil,
          this.now() + evt.retry_after_ms,
        );
        break;
      case "end":
        this.state.phase = "ended";
        this.state.outcome = evt.outcome;
        this.state.transcriptId = evt.transcript_id;
        break;
      case "error":
        this.state.lastError = evt.message;
        break;
    }
    this.emit();
  }

  private applyPaired(evt: PairedEvent): void {
    this.state.phase = "playing";
    this.state.side = evt.side;
    this.state.attributes = evt.attributes;
    this.state.kb = evt.kb;
    this.state.deadlineAt = this.now() + evt.deadline_ms;
  }

  sendUtterance(text: string): boolean {
    const trimmed = text.trim();
    if (trimmed === "" || this.state.phase !== "playing") return false;
    this.send({ type: "utterance", text: trimmed });
    this.state.messages.push({ who: "you", text: trimmed, at: this.now() });
    this.emit();
    return true;
  }

  sendTyping(): void {
    if (this.state.phase === "playing") this.send({ type: "typing" });
  }

  cooldownRemainingMs(): number {
    return Math.max(0, this.state.cooldownUntil - this.now());
  }

  select(index: number): boolean {
    if (this.state.phase !== "playing") return false;
    if (index < 0 || index >= this.state.kb.length) return false;
    if (this.cooldownRemainingMs() > 0) return false;
    // start the cooldown at send time so the client can never beat the server
    this.state.cooldownUntil = this.now() + SELECT_COOLDOWN_MS;
    this.send({ type: "select", item_index: index });
    this.emit();
    return true;
  }

  async submitRating(
    rating: Partial<Rating>,
    post: (path: string, body: unknown) => Promise<boolean>,
  ): Promise<boolean> {
    if (this.state.phase !== "ended" || this.state.transcriptId === null) return false;
    if (!validRating(rating)) return false;
    return post("/ratings", {
      transcript_id: this.state.transcriptId,
      ...rating,
      comment: rating.comment ?? "",
    });
  }
}
