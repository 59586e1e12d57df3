/**
 * Serve a scorer over stdio or TCP.  Requests are handled strictly in
 * arrival order with one in flight at a time; scorer exceptions become error
 * responses and the connection stays open.
 */

import * as net from "node:net";
import * as readline from "node:readline";
import { stdin, stdout } from "node:process";
import { handleRequestLine, handshakeLine, type Bounds, type Scorer } from "./protocol.js";

export async function serveStdio(scorer: Scorer, bounds: Bounds): Promise<void> {
  stdout.write(handshakeLine(bounds) + "\n");
  for await (const raw of readline.createInterface({ input: stdin })) {
    const line = raw.trim();
    if (line === "") continue;
    stdout.write(handleRequestLine(line, scorer) + "\n");
  }
}

export interface TcpServerHandle {
  port: number;
  close(): Promise<void>;
}

export function serveTcp(
  scorer: Scorer,
  bounds: Bounds,
  port: number,
  host = "127.0.0.1",
): Promise<TcpServerHandle> {
  const server = net.createServer((socket) => {
    socket.write(handshakeLine(bounds) + "\n");
    const lines = readline.createInterface({ input: socket });
    lines.on("line", (raw) => {
      const line = raw.trim();
      if (line === "") return;
      socket.write(handleRequestLine(line, scorer) + "\n");
    });
    socket.on("error", () => socket.destroy());
  });
  // one connection served at a time per process
  server.maxConnections = 1;
  return new Promise((resolve, reject) => {
    server.once("error", reject);
    server.listen(port, host, () => {
      const address = server.address() as net.AddressInfo;
      resolve({
        port: address.port,
        close: () =>
          new Promise<void>((done) => {
            server.close(() => done());
          }),
      });
    });
  });
}
