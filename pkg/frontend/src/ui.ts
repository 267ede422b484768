// DOM rendering for the chat view: KB table, conversation log, selection
// buttons with cooldown, countdown, and the post-chat rating form.

import { SessionClient } from "./client.js";
import { RATING_ASPECTS, Rating } from "./protocol.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class ChatView {
  root: HTMLElement;
  private client: SessionClient;
  private post: (path: string, body: unknown) => Promise<boolean>;
  private now: () => number;
  private ratingDraft: Partial<Rating> = {};
  private ratingDone = false;

  constructor(
    root: HTMLElement,
    client: SessionClient,
    post: (path: string, body: unknown) => Promise<boolean>,
    now: () => number = () => Date.now(),
  ) {
    this.root = root;
    this.client = client;
    this.post = post;
    this.now = now;
    client.onChange(() => this.render());
  }

  render(): void {
    const s = this.client.state;
    this.root.textContent = "";
    if (s.lastError !== null && s.phase !== "ended") {
      const banner = el("div", "banner error", s.lastError === "connection lost"
        ? "Connection lost — refresh to rejoin"
        : s.lastError);
      banner.id = "error-banner";
      this.root.append(banner);
    }
    if (s.phase === "connecting" || s.phase === "waiting") {
      this.root.append(
        el("div", "banner", s.phase === "waiting"
          ? "Waiting for a partner…"
          : "Connecting…"),
      );
      return;
    }
    this.root.append(this.header(), this.kbTable(), this.conversation());
    if (s.phase === "playing") {
      this.root.append(this.composer());
    } else {
      this.root.append(this.endCard());
    }
  }

  private header(): HTMLElement {
    const s = this.client.state;
    const head = el("div", "header");
    head.append(el("span", "title", "Find your mutual friend"));
    if (s.deadlineAt !== null && s.phase === "playing") {
      const left = Math.max(0, Math.ceil((s.deadlineAt - this.now()) / 1000));
      const mm = Math.floor(left / 60);
      const ss = String(left % 60).padStart(2, "0");
      const clock = el("span", "countdown", `${mm}:${ss}`);
      clock.id = "countdown";
      head.append(clock);
    }
    return head;
  }

  private kbTable(): HTMLElement {
    const s = this.client.state;
    const table = el("table", "kb");
    const thead = el("thead");
    const headRow = el("tr");
    headRow.append(el("th", "", ""));
    for (const attr of s.attributes) headRow.append(el("th", "", attr));
    headRow.append(el("th", "", "select"));
    thead.append(headRow);
    table.append(thead);
    const tbody = el("tbody");
    const cooldown = this.client.cooldownRemainingMs();
    s.kb.forEach((row, i) => {
      const tr = el("tr", i === s.selectedIndex ? "row selected" : "row");
      tr.append(el("td", "idx", String(i + 1)));
      for (const attr of s.attributes) tr.append(el("td", "", row[attr] ?? ""));
      const cell = el("td");
      const button = el("button", "select-btn");
      button.textContent = cooldown > 0 ? `wait ${Math.ceil(cooldown / 1000)}s` : "select";
      button.disabled = cooldown > 0 || s.phase !== "playing";
      button.addEventListener("click", () => this.client.select(i));
      cell.append(button);
      tr.append(cell);
      tbody.append(tr);
    });
    table.append(tbody);
    return table;
  }

  private conversation(): HTMLElement {
    const s = this.client.state;
    const log = el("div", "conversation");
    for (const msg of s.messages) {
      log.append(el("div", `msg ${msg.who}`, `${msg.who === "you" ? "you" : "partner"}: ${msg.text}`));
    }
    if (s.partnerTypingUntil > this.now()) {
      const typing = el("div", "typing", "partner is typing…");
      typing.id = "typing";
      log.append(typing);
    }
    return log;
  }

  private composer(): HTMLElement {
    const bar = el("div", "composer");
    const input = el("input");
    input.type = "text";
    input.placeholder = "say something…";
    input.id = "composer-input";
    input.addEventListener("input", () => this.client.sendTyping());
    const send = () => {
      if (this.client.sendUtterance(input.value)) input.value = "";
    };
    input.addEventListener("keydown", (e) => {
      if ((e as KeyboardEvent).key === "Enter") send();
    });
    const button = el("button", "send-btn", "send");
    button.addEventListener("click", send);
    bar.append(input, button);
    return bar;
  }

  private endCard(): HTMLElement {
    const s = this.client.state;
    const card = el("div", "end-card");
    const headline = s.outcome === "success"
      ? "You found your mutual friend!"
      : s.outcome === "timeout"
        ? "Time ran out."
        : "No match this time.";
    card.append(el("div", `outcome ${s.outcome ?? ""}`, headline));
    if (this.ratingDone) {
      card.append(el("div", "thanks", "Thanks for the feedback!"));
      return card;
    }
    card.append(el("div", "rate-title", "Rate your partner (1 = very bad, 5 = very good)"));
    const form = el("div", "rating-form");
    for (const aspect of RATING_ASPECTS) {
      const row = el("div", "rating-row");
      row.append(el("label", "", aspect.replace("_", " ")));
      const pick = el("select");
      pick.id = `rate-${aspect}`;
      pick.append(el("option", "", "–"));
      for (let v = 1; v <= 5; v++) {
        const opt = el("option", "", String(v));
        opt.value = String(v);
        pick.append(opt);
      }
      pick.addEventListener("change", () => {
        const value = parseInt(pick.value, 10);
        if (Number.isInteger(value)) this.ratingDraft[aspect] = value;
        else delete this.ratingDraft[aspect];
      });
      row.append(pick);
      form.append(row);
    }
    const comment = el("input");
    comment.type = "text";
    comment.placeholder = "optional comment";
    comment.id = "rate-comment";
    comment.addEventListener("input", () => {
      this.ratingDraft.comment = comment.value;
    });
    form.append(comment);
    const error = el("div", "rating-error");
    error.id = "rating-error";
    const submit = el("button", "rate-submit", "submit rating");
    submit.addEventListener("click", async () => {
      const ok = await this.client.submitRating(this.ratingDraft, this.post);
      if (ok) {
        this.ratingDone = true;
        this.render();
      } else {
        error.textContent = "please score every aspect from 1 to 5";
      }
    });
    form.append(submit, error);
    card.append(form);
    return card;
  }
}
