/**
 * Decoders behind the adapter.
 *
 * A Decoder turns one decode request into exactly three candidates. The
 * shipped decoders are deterministic references: EchoDecoder derives its
 * candidates from the newest bank mask; FixtureDecoder answers from a JSON
 * table. A real segmentation model wrapper would implement this same
 * interface (see README); nothing else in the adapter needs to change.
 */

import * as fs from "fs";

import { dilate4, erode4 } from "./morph";
import { parseMask, serializeMask } from "./rle";
import { CandidateItem, DecodeMessage, ProtocolError } from "./protocol";

export interface Decoded {
  occ: number;
  items: CandidateItem[];
}

export interface Decoder {
  decode(msg: DecodeMessage): Decoded;
}

function newestMaskRle(msg: DecodeMessage): string {
  let best = msg.bank[0];
  for (const entry of msg.bank) {
    if (entry.frame_index >= best.frame_index) {
      best = entry;
    }
  }
  return best.mask_rle;
}

/** Identity / eroded / dilated variants of the newest bank mask. */
export class EchoDecoder implements Decoder {
  static readonly IOUS = [0.9, 0.5, 0.7];
  static readonly OCC = 3.0;

  decode(msg: DecodeMessage): Decoded {
    const newest = parseMask(newestMaskRle(msg));
    const masks = [newest, erode4(newest), dilate4(newest)];
    return {
      occ: EchoDecoder.OCC,
      items: masks.map((mask, k) => ({
        iou: EchoDecoder.IOUS[k],
        mask_rle: serializeMask(mask),
        payload_b64: "",
      })),
    };
  }
}

interface FixtureFile {
  occ: number;
  responses: Record<string, { iou: number; mask_rle?: string }[]>;
}

/** Table-driven decoder keyed by "objectId:time"; masks default to the newest bank mask. */
export class FixtureDecoder implements Decoder {
  private fixture: FixtureFile;

  constructor(path: string) {
    this.fixture = JSON.parse(fs.readFileSync(path, "utf-8"));
    if (typeof this.fixture.occ !== "number" || typeof this.fixture.responses !== "object") {
      throw new ProtocolError(`fixture file ${path} is missing occ/responses`);
    }
  }

  decode(msg: DecodeMessage): Decoded {
    const key = `${msg.object_id}:${msg.time}`;
    const scripted = this.fixture.responses[key];
    if (!scripted || scripted.length !== 3) {
      throw new ProtocolError(`no fixture entry for ${key}`);
    }
    const fallback = newestMaskRle(msg);
    return {
      occ: this.fixture.occ,
      items: scripted.map((item) => ({
        iou: item.iou,
        mask_rle: item.mask_rle ?? fallback,
        payload_b64: "",
      })),
    };
  }
}
