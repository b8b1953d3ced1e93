/**
 * TTAC v1 writer (and a header reader for self-checks).
 *
 * Little-endian layout: "TTAC" magic, u32 version, u64 n_examples,
 * u32 n_augs, u32 n_classes, per-augmentation [u32 byte length + UTF-8
 * name], labels as n u32 values, then n*m*k float32 logits row-major in
 * (example, augmentation, class) order.
 */

import { writeFileSync, readFileSync } from 'fs';
import { endianness } from 'os';

export const TTAC_MAGIC = 'TTAC';
export const TTAC_VERSION = 1;

export interface TtacTensor {
  augNames: string[];
  labels: Uint32Array;
  /** n * m * k logits, row-major */
  logits: Float32Array;
  nExamples: number;
  nAugs: number;
  nClasses: number;
}

export interface TtacHeader {
  version: number;
  nExamples: number;
  nAugs: number;
  nClasses: number;
  augNames: string[];
}

export function encodeTtac(tensor: TtacTensor): Buffer {
  const { augNames, labels, logits, nExamples, nAugs, nClasses } = tensor;
  if (augNames.length !== nAugs) throw new Error('aug name count must equal nAugs');
  if (labels.length !== nExamples) throw new Error('label count must equal nExamples');
  if (logits.length !== nExamples * nAugs * nClasses) {
    throw new Error('logit buffer size mismatch');
  }
  const parts: Buffer[] = [];
  parts.push(Buffer.from(TTAC_MAGIC, 'ascii'));
  const fixed = Buffer.alloc(20);
  fixed.writeUInt32LE(TTAC_VERSION, 0);
  fixed.writeBigUInt64LE(BigInt(nExamples), 4);
  fixed.writeUInt32LE(nAugs, 12);
  fixed.writeUInt32LE(nClasses, 16);
  parts.push(fixed);
  for (const name of augNames) {
    const encoded = Buffer.from(name, 'utf-8');
    const len = Buffer.alloc(4);
    len.writeUInt32LE(encoded.length, 0);
    parts.push(len, encoded);
  }
  const labelBuf = Buffer.alloc(4 * nExamples);
  for (let i = 0; i < nExamples; i++) labelBuf.writeUInt32LE(labels[i], i * 4);
  parts.push(labelBuf);
  parts.push(float32ToLeBuffer(logits));
  return Buffer.concat(parts);
}

function float32ToLeBuffer(values: Float32Array): Buffer {
  if (endianness() === 'LE') {
    return Buffer.from(values.buffer, values.byteOffset, values.byteLength);
  }
  const buf = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) buf.writeFloatLE(values[i], i * 4);
  return buf;
}

export function writeTtac(path: string, tensor: TtacTensor): void {
  writeFileSync(path, encodeTtac(tensor));
}

export function readTtacHeader(path: string): TtacHeader {
  const data = readFileSync(path);
  if (data.subarray(0, 4).toString('ascii') !== TTAC_MAGIC) {
    throw new Error(`bad magic in ${path}`);
  }
  const version = data.readUInt32LE(4);
  const nExamples = Number(data.readBigUInt64LE(8));
  const nAugs = data.readUInt32LE(16);
  const nClasses = data.readUInt32LE(20);
  const augNames: string[] = [];
  let pos = 24;
  for (let i = 0; i < nAugs; i++) {
    const len = data.readUInt32LE(pos);
    pos += 4;
    augNames.push(data.subarray(pos, pos + len).toString('utf-8'));
    pos += len;
  }
  return { version, nExamples, nAugs, nClasses, augNames };
}

/** Full read-back, used by round-trip tests. */
export function readTtac(path: string): TtacTensor {
  const data = readFileSync(path);
  const header = readTtacHeader(path);
  let pos = 24;
  for (const name of header.augNames) pos += 4 + Buffer.byteLength(name, 'utf-8');
  const { nExamples, nAugs, nClasses } = header;
  const labels = new Uint32Array(nExamples);
  for (let i = 0; i < nExamples; i++) labels[i] = data.readUInt32LE(pos + i * 4);
  pos += 4 * nExamples;
  const count = nExamples * nAugs * nClasses;
  const logits = new Float32Array(count);
  for (let i = 0; i < count; i++) logits[i] = data.readFloatLE(pos + i * 4);
  if (pos + count * 4 !== data.length) throw new Error('trailing bytes in TTAC file');
  return { augNames: header.augNames, labels, logits, nExamples, nAugs, nClasses };
}
