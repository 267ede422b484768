// Wire protocol v1: one JSON object per websocket message.
// This file is the single source of truth for the client side of the schema.

export const PROTOCOL_VERSION = 1;

export interface PairedEvent {
  v: number;
  type: "paired";
  session_id: string;
  side: "A" | "B";
  attributes: string[];
  kb: Record<string, string>[];
  n_items: number;
  deadline_ms: number;
}

export interface PartnerEvent {
  v: number;
  type: "partner_event";
  kind: "utterance" | "typing";
  text?: string;
}

export interface EndEvent {
  v: number;
  type: "end";
  outcome: "success" | "failure" | "timeout";
  transcript_id: string;
}

export type ServerEvent =
  | { v: number; type: "joined"; token: string }
  | { v: number; type: "waiting" }
  | PairedEvent
  | PartnerEvent
  | { v: number; type: "select_ack"; item_index: number }
  | { v: number; type: "select_rejected"; retry_after_ms: number }
  | EndEvent
  | { v: number; type: "error"; message: string };

export type ClientEvent =
  | { v: number; type: "join" }
  | { v: number; type: "utterance"; text: string }
  | { v: number; type: "typing" }
  | { v: number; type: "select"; item_index: number };

export interface Rating {
  fluency: number;
  correctness: number;
  cooperation: number;
  human_likeness: number;
  comment?: string;
}

export const RATING_ASPECTS = [
  "fluency",
  "correctness",
  "cooperation",
  "human_likeness",
] as const;

export function parseServerEvent(raw: string): ServerEvent | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const evt = data as { v?: unknown; type?: unknown };
  if (evt.v !== PROTOCOL_VERSION || typeof evt.type !== "string") return null;
  return data as ServerEvent;
}

// Omit must distribute over the event union, not collapse it.
export type OutgoingEvent = ClientEvent extends infer T
  ? T extends ClientEvent
    ? Omit<T, "v">
    : never
  : never;

export function encodeClientEvent(evt: OutgoingEvent): string {
  return JSON.stringify({ v: PROTOCOL_VERSION, ...evt });
}

export function validRating(r: Partial<Rating>): r is Rating {
  return RATING_ASPECTS.every((aspect) => {
    const value = r[aspect];
    return typeof value === "number" && Number.isInteger(value) && value >= 1 && value <= 5;
  });
}
