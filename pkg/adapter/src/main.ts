/**
 * Stdio entry point: serve the NDJSON protocol until "bye".
 *
 * Usage: node dist/main.js [--mode echo|fixture] [--fixture path.json]
 *
 * Requests are handled strictly serially and the handshake declares
 * concurrent:false. A malformed engine message gets an error reply and a
 * nonzero exit.
 */

import * as readline from "readline";

import { Decoder, EchoDecoder, FixtureDecoder } from "./decoder";
import { PROTOCOL_VERSION, ProtocolError, candidatesReply, parseDecode } from "./protocol";

function parseArgs(argv: string[]): { mode: string; fixture?: string } {
  let mode = "echo";
  let fixture: string | undefined;
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === "--mode") {
      mode = argv[++i];
    } else if (argv[i] === "--fixture") {
      fixture = argv[++i];
    } else {
      process.stderr.write(`unknown argument ${argv[i]}\n`);
      process.exit(2);
    }
  }
  return { mode, fixture };
}

function makeDecoder(args: { mode: string; fixture?: string }): Decoder {
  if (args.mode === "echo") {
    return new EchoDecoder();
  }
  if (args.mode === "fixture") {
    if (!args.fixture) {
      process.stderr.write("--mode fixture needs --fixture <path>\n");
      process.exit(2);
    }
    return new FixtureDecoder(args.fixture);
  }
  process.stderr.write(`unknown mode ${args.mode}\n`);
  process.exit(2);
}

function emit(obj: unknown): void {
  process.stdout.write(JSON.stringify(obj) + "\n");
}

function fail(message: string): never {
  emit({ type: "error", message });
  process.exit(1);
}

function main(): void {
  const decoder = makeDecoder(parseArgs(process.argv.slice(2)));
  let greeted = false;
  const lines = readline.createInterface({ input: process.stdin, terminal: false });

  lines.on("line", (line: string) => {
    const trimmed = line.trim();
    if (!trimmed) {
      return;
    }
    let msg: Record<string, unknown>;
    try {
      msg = JSON.parse(trimmed);
    } catch {
      fail(`not JSON: ${trimmed.slice(0, 80)}`);
    }
    switch (msg.type) {
      case "hello":
        if (msg.version !== PROTOCOL_VERSION) {
          fail(`unsupported protocol version ${msg.version}`);
        }
        greeted = true;
        emit({ type: "hello", version: PROTOCOL_VERSION, concurrent: false });
        break;
      case "decode": {
        if (!greeted) {
          fail("decode before handshake");
        }
        try {
          const request = parseDecode(msg);
          const { occ, items } = decoder.decode(request);
          emit(candidatesReply(occ, items));
        } catch (err) {
          if (err instanceof ProtocolError || err instanceof Error) {
            fail(err.message);
          }
          throw err;
        }
        break;
      }
      case "bye":
        process.exit(0);
        break;
      default:
        fail(`unknown message type ${JSON.stringify(msg.type)}`);
    }
  });

  lines.on("close", () => {
    process.exit(0);
  });
}

main();
