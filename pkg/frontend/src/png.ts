// Minimal dependency-free PNG codec for 64x64 RGB images.
//
// Encoding writes stored (uncompressed) zlib blocks, which every PNG reader
// accepts; decoding handles exactly the files this encoder produces, enough
// for round-trip tests and re-importing exported paintings.

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < bytes.length; i++) {
    a = (a + bytes[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function u32(v: number): number[] {
  return [(v >>> 24) & 0xff, (v >>> 16) & 0xff, (v >>> 8) & 0xff, v & 0xff];
}

function chunk(type: string, data: number[] | Uint8Array): number[] {
  const body = new Uint8Array(4 + data.length);
  for (let i = 0; i < 4; i++) body[i] = type.charCodeAt(i);
  body.set(data instanceof Uint8Array ? data : Uint8Array.from(data), 4);
  return [...u32(data.length), ...body, ...u32(crc32(body))];
}

function storedZlib(raw: Uint8Array): Uint8Array {
  const blocks: number[] = [0x78, 0x01]; // zlib header, no compression hint
  const max = 65535;
  for (let off = 0; off < raw.length; off += max) {
    const len = Math.min(max, raw.length - off);
    const final = off + len >= raw.length ? 1 : 0;
    blocks.push(final, len & 0xff, (len >> 8) & 0xff, ~len & 0xff, (~len >> 8) & 0xff);
    for (let i = 0; i < len; i++) blocks.push(raw[off + i]);
  }
  blocks.push(...u32(adler32(raw)));
  return Uint8Array.from(blocks);
}

/** rgb: 3*size*size values in [0,255], channel-last per pixel. */
export function encodePng(rgb: Uint8Array, size: number): Uint8Array {
  if (rgb.length !== size * size * 3) {
    throw new Error(`expected ${size * size * 3} bytes, got ${rgb.length}`);
  }
  const raw = new Uint8Array(size * (1 + size * 3));
  for (let y = 0; y < size; y++) {
    raw[y * (1 + size * 3)] = 0; // filter: none
    raw.set(rgb.subarray(y * size * 3, (y + 1) * size * 3), y * (1 + size * 3) + 1);
  }
  const ihdr = [...u32(size), ...u32(size), 8, 2, 0, 0, 0]; // 8-bit RGB
  const out = [
    ...SIGNATURE,
    ...chunk("IHDR", ihdr),
    ...chunk("IDAT", storedZlib(raw)),
    ...chunk("IEND", []),
  ];
  return Uint8Array.from(out);
}

/** Decode a PNG produced by encodePng (stored zlib blocks, RGB-8, filter 0). */
export function decodePng(bytes: Uint8Array): { size: number; rgb: Uint8Array } {
  for (let i = 0; i < 8; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG");
  }
  let pos = 8;
  let size = 0;
  const idat: number[] = [];
  while (pos < bytes.length) {
    const len = (bytes[pos] << 24) | (bytes[pos + 1] << 16) | (bytes[pos + 2] << 8) | bytes[pos + 3];
    const type = String.fromCharCode(bytes[pos + 4], bytes[pos + 5], bytes[pos + 6], bytes[pos + 7]);
    const data = bytes.subarray(pos + 8, pos + 8 + len);
    if (type === "IHDR") {
      size = (data[0] << 24) | (data[1] << 16) | (data[2] << 8) | data[3];
      if (data[8] !== 8 || data[9] !== 2) throw new Error("decoder only handles 8-bit RGB");
    } else if (type === "IDAT") {
      idat.push(...data);
    }
    pos += 12 + len;
  }
  // stored zlib blocks: skip the 2-byte header, walk LEN/NLEN frames
  const z = Uint8Array.from(idat);
  if ((z[0] & 0x0f) !== 8) throw new Error("bad zlib header");
  const raw: number[] = [];
  let p = 2;
  for (;;) {
    const final = z[p] & 1;
    if ((z[p] >> 1) & 3) throw new Error("decoder only handles stored blocks");
    const len = z[p + 1] | (z[p + 2] << 8);
    for (let i = 0; i < len; i++) raw.push(z[p + 5 + i]);
    p += 5 + len;
    if (final) break;
  }
  const rgb = new Uint8Array(size * size * 3);
  const stride = 1 + size * 3;
  for (let y = 0; y < size; y++) {
    if (raw[y * stride] !== 0) throw new Error("decoder only handles filter 0");
    for (let i = 0; i < size * 3; i++) rgb[y * size * 3 + i] = raw[y * stride + 1 + i];
  }
  return { size, rgb };
}

export function bytesToBase64(bytes: Uint8Array): string {
  if (typeof Buffer !== "undefined") return Buffer.from(bytes).toString("base64");
  let s = "";
  for (let i = 0; i < bytes.length; i++) s += String.fromCharCode(bytes[i]);
  return btoa(s);
}

export function base64ToBytes(b64: string): Uint8Array {
  if (typeof Buffer !== "undefined") return new Uint8Array(Buffer.from(b64, "base64"));
  const s = atob(b64);
  const out = new Uint8Array(s.length);
  for (let i = 0; i < s.length; i++) out[i] = s.charCodeAt(i);
  return out;
}
