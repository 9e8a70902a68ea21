/**
 * Wire protocol v1: NDJSON over stdio, one JSON object per line.
 *
 *   engine  -> {"type":"hello","version":1}
 *   adapter <- {"type":"hello","version":1,"concurrent":false}
 *   engine  -> {"type":"decode","object_id":N,"time":N,"frame":"id","bank":[entry...]}
 *   adapter <- {"type":"candidates","occ":F,"items":[{iou,mask_rle,payload_b64} x3]}
 *   engine  -> {"type":"bye"}
 */

export const PROTOCOL_VERSION = 1;

export interface BankEntry {
  frame_index: number;
  weight: number;
  iou: number;
  occ: number;
  mask_rle: string;
  payload_b64: string;
  is_prompt: boolean;
}

export interface DecodeMessage {
  type: "decode";
  object_id: number;
  time: number;
  frame: string;
  bank: BankEntry[];
}

export interface CandidateItem {
  iou: number;
  mask_rle: string;
  payload_b64: string;
}

export interface CandidatesMessage {
  type: "candidates";
  occ: number;
  items: CandidateItem[];
}

export class ProtocolError extends Error {}

export function parseDecode(msg: Record<string, unknown>): DecodeMessage {
  const bank = msg.bank;
  if (
    typeof msg.object_id !== "number" ||
    typeof msg.time !== "number" ||
    !Array.isArray(bank) ||
    bank.length === 0
  ) {
    throw new ProtocolError("malformed decode message");
  }
  for (const entry of bank) {
    if (
      typeof entry !== "object" ||
      entry === null ||
      typeof entry.frame_index !== "number" ||
      typeof entry.mask_rle !== "string"
    ) {
      throw new ProtocolError("malformed bank entry");
    }
  }
  return msg as unknown as DecodeMessage;
}

export function candidatesReply(occ: number, items: CandidateItem[]): CandidatesMessage {
  if (items.length !== 3) {
    throw new ProtocolError(`a reply needs exactly 3 candidates, got ${items.length}`);
  }
  return { type: "candidates", occ, items };
}
