//! Built-in synthetic targets and the seed corpora that go with them.
//!
//! `keymatch` and `nested` accept two encodings of the same payload, picked
//! by the high bit of the first byte. Plain payloads are read as-is and are
//! cheap. Packed payloads are delta coded (and run-length coded for
//! `nested`) with a trailing checksum of the decoded bytes: they are smaller
//! on disk but an order of magnitude more expensive to decode, and almost any mutation
//! breaks the checksum. Both encodings of a payload reach the same edges.

use std::sync::Arc;

use crate::energy::{CostModel, HitRecorder, ProgramExit, SyntheticProgram, SyntheticTarget};

/// Registered model names.
pub const MODELS: &[&str] = &["fork3", "keymatch", "keymatch-flat", "nested"];

const PACKED: u8 = 0x80;
const DECODE_EDGE: usize = 2;
const BAD_CHECKSUM_EDGE: usize = 3;
const MAX_DECODED: usize = 4096;

pub fn lookup(model: &str) -> Option<SyntheticTarget> {
    let target = match model {
        "fork3" => SyntheticTarget::new(
            Arc::new(Fork3),
            CostModel {
                edge_cpu_j: 0.5,
                edge_ram_j: 0.1,
                byte_cpu_j: 0.01,
                time_base_us: 20.0,
                time_per_byte_us: 1.0,
                time_per_edge_us: 2.0,
                ..CostModel::default()
            },
        ),
        "keymatch" => SyntheticTarget::new(Arc::new(KeyMatch), decoder_costs()),
        "keymatch-flat" => SyntheticTarget::new(Arc::new(KeyMatch), flat(decoder_costs())),
        "nested" => SyntheticTarget::new(Arc::new(Nested), decoder_costs()),
        _ => return None,
    };
    Some(target)
}

fn decoder_costs() -> CostModel {
    CostModel {
        edge_cpu_j: 5e-6,
        edge_ram_j: 1e-6,
        time_base_us: 40.0,
        time_per_byte_us: 1.5,
        time_per_edge_us: 2.0,
        ..CostModel::default()
    }
    .with_edge_cost(DECODE_EDGE, 1e-4, 2e-5)
}

/// Same timing, zero energy everywhere.
fn flat(costs: CostModel) -> CostModel {
    CostModel {
        edge_cpu_j: 0.0,
        edge_ram_j: 0.0,
        edge_costs: Default::default(),
        byte_cpu_j: 0.0,
        byte_ram_j: 0.0,
        ..costs
    }
}

/// Delta coding: each output byte is the difference to the previous one.
pub fn pack_delta(payload: &[u8]) -> Vec<u8> {
    let mut prev = 0u8;
    payload
        .iter()
        .map(|&b| {
            let d = b.wrapping_sub(prev);
            prev = b;
            d
        })
        .collect()
}

pub fn unpack_delta(body: &[u8]) -> Vec<u8> {
    let mut prev = 0u8;
    body.iter()
        .take(MAX_DECODED)
        .map(|&d| {
            prev = prev.wrapping_add(d);
            prev
        })
        .collect()
}

/// Run-length pairs `(len - 1, delta)` with runs of at most 32 bytes.
pub fn pack_rle_delta(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut prev = 0u8;
    let mut i = 0;
    while i < payload.len() {
        let b = payload[i];
        let mut run = 1;
        while i + run < payload.len() && payload[i + run] == b && run < 32 {
            run += 1;
        }
        out.push((run - 1) as u8);
        out.push(b.wrapping_sub(prev));
        prev = b;
        i += run;
    }
    out
}

pub fn unpack_rle_delta(body: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut prev = 0u8;
    for pair in body.chunks_exact(2) {
        let run = (pair[0] & 31) as usize + 1;
        prev = prev.wrapping_add(pair[1]);
        let room = MAX_DECODED - out.len();
        out.extend(std::iter::repeat_n(prev, run.min(room)));
        if out.len() == MAX_DECODED {
            break;
        }
    }
    out
}

/// Three byte-wise forks on the first three bytes.
///
/// Edges: 0 entry; `1 + 2i` upper-case byte i; `2 + 2i` other byte i;
/// `7 + i` input shorter than i+1. Crashes on a `!!!` prefix.
struct Fork3;

impl SyntheticProgram for Fork3 {
    fn name(&self) -> &str {
        "fork3"
    }
    fn map_size(&self) -> usize {
        64
    }
    fn total_edges(&self) -> Option<usize> {
        Some(10)
    }
    fn run(&self, input: &[u8], hits: &mut HitRecorder) -> ProgramExit {
        hits.hit(0);
        for i in 0..3 {
            match input.get(i) {
                Some(b) if b.is_ascii_uppercase() => hits.hit(1 + 2 * i),
                Some(_) => hits.hit(2 + 2 * i),
                None => hits.hit(7 + i),
            }
        }
        if input.starts_with(b"!!!") {
            return ProgramExit::Crash(11);
        }
        ProgramExit::Ok
    }
}

#[derive(Clone, Copy)]
enum Codec {
    Delta,
    RleDelta,
}

impl Codec {
    /// Decode-loop iterations per packed byte, tuned so each packed seed
    /// costs roughly ten times its plain twin.
    fn decode_factor(self) -> u32 {
        match self {
            Codec::Delta => 20,
            Codec::RleDelta => 12,
        }
    }
}

pub fn checksum(payload: &[u8]) -> u8 {
    payload.iter().fold(0x5a, |a: u8, &b| a.rotate_left(1) ^ b)
}

/// Decodes the payload and charges the decode loop. Returns `None` for an
/// empty input or a packed payload whose checksum does not match.
fn decode(input: &[u8], hits: &mut HitRecorder, codec: Codec) -> Option<Vec<u8>> {
    hits.hit(0);
    let (&header, body) = match input.split_first() {
        Some(split) => split,
        None => {
            hits.hit(1);
            return None;
        }
    };
    if header & PACKED == 0 {
        let payload: Vec<u8> = body.iter().take(MAX_DECODED).copied().collect();
        hits.hit_n(DECODE_EDGE, payload.len() as u32);
        return Some(payload);
    }
    let (sum, body) = body.split_last().unwrap_or((&0, &[]));
    let payload = match codec {
        Codec::Delta => unpack_delta(body),
        Codec::RleDelta => unpack_rle_delta(body),
    };
    hits.hit_n(DECODE_EDGE, payload.len() as u32 * codec.decode_factor());
    if payload.is_empty() || checksum(&payload) != *sum {
        hits.hit(BAD_CHECKSUM_EDGE);
        return None;
    }
    Some(payload)
}

pub const KEYS: [&[u8; 4]; 8] = [b"LOAD", b"SAVE", b"MOVE", b"JUMP", b"CALL", b"PUSH", b"HALT", b"WAIT"];

/// Keyword matcher: one edge per matched prefix byte of each keyword and one
/// per keyword immediately repeated. `HALT!` crashes.
struct KeyMatch;

impl SyntheticProgram for KeyMatch {
    fn name(&self) -> &str {
        "keymatch"
    }
    fn map_size(&self) -> usize {
        128
    }
    fn total_edges(&self) -> Option<usize> {
        Some(4 + 4 * KEYS.len() + KEYS.len())
    }
    fn run(&self, input: &[u8], hits: &mut HitRecorder) -> ProgramExit {
        let Some(payload) = decode(input, hits, Codec::Delta) else {
            return ProgramExit::Ok;
        };
        for (k, key) in KEYS.iter().enumerate() {
            let mut best = 0;
            let mut doubled = false;
            for p in 0..payload.len() {
                let n = payload[p..].iter().zip(key.iter()).take_while(|(a, b)| a == b).count();
                best = best.max(n);
                if n == 4 && payload[p + 4..].starts_with(&key[..]) {
                    doubled = true;
                }
            }
            for l in 0..best {
                hits.hit(16 + 4 * k + l);
            }
            if doubled {
                hits.hit(48 + k);
            }
        }
        if payload.windows(5).any(|w| w == b"HALT!") {
            return ProgramExit::Crash(6);
        }
        ProgramExit::Ok
    }
}

const OPENERS: &[u8; 4] = b"([{<";
const CLOSERS: &[u8; 4] = b")]}>";
const MAX_DEPTH: usize = 24;
const CLOSE_BASE: usize = 16;
const MISMATCH_BASE: usize = CLOSE_BASE + 4 * MAX_DEPTH;
const STRAY_BASE: usize = MISMATCH_BASE + 16;
const LETTER_BASE: usize = STRAY_BASE + 4;
const UNCLOSED_EDGE: usize = LETTER_BASE + MAX_DEPTH;
const OPEN_BASE: usize = UNCLOSED_EDGE + 1;

/// Bracket parser. Edges: opener of each type, closer of type t matching
/// at depth d, mismatched closer, stray closer, lower-case letter at depth
/// d, and end of input with brackets still open. Depths cap at 24, so deep
/// levels need long balanced inputs.
struct Nested;

impl SyntheticProgram for Nested {
    fn name(&self) -> &str {
        "nested"
    }
    fn map_size(&self) -> usize {
        256
    }
    fn total_edges(&self) -> Option<usize> {
        Some(4 + OPEN_BASE + 4 - CLOSE_BASE)
    }
    fn run(&self, input: &[u8], hits: &mut HitRecorder) -> ProgramExit {
        let Some(payload) = decode(input, hits, Codec::RleDelta) else {
            return ProgramExit::Ok;
        };
        let mut stack: Vec<usize> = Vec::new();
        for &c in &payload {
            if let Some(t) = OPENERS.iter().position(|&o| o == c) {
                stack.push(t);
                hits.hit(OPEN_BASE + t);
            } else if let Some(u) = CLOSERS.iter().position(|&o| o == c) {
                match stack.last() {
                    None => {
                        hits.hit(STRAY_BASE + u);
                        return ProgramExit::Ok;
                    }
                    Some(&t) if t == u => {
                        let d = stack.len().min(MAX_DEPTH);
                        hits.hit(CLOSE_BASE + MAX_DEPTH * t + d - 1);
                        stack.pop();
                    }
                    Some(&t) => {
                        hits.hit(MISMATCH_BASE + 4 * t + u);
                        return ProgramExit::Ok;
                    }
                }
            } else if c.is_ascii_lowercase() {
                hits.hit(LETTER_BASE + stack.len().min(MAX_DEPTH - 1));
            }
        }
        if !stack.is_empty() {
            hits.hit(UNCLOSED_EDGE);
        }
        ProgramExit::Ok
    }
}

fn plain(payload: &[u8], pad: usize) -> Vec<u8> {
    let mut v = vec![0u8];
    v.extend_from_slice(payload);
    v.extend(std::iter::repeat_n(b' ', pad));
    v
}

fn packed(payload: &[u8], rle: bool) -> Vec<u8> {
    let mut v = vec![PACKED];
    v.extend(if rle { pack_rle_delta(payload) } else { pack_delta(payload) });
    v.push(checksum(payload));
    v
}

/// Names of the built-in seed corpora.
pub const CORPORA: &[&str] = &["fork3", "keymatch", "keymatch-distinct", "nested"];

/// A built-in seed corpus as `(file name, bytes)` pairs.
pub fn corpus(name: &str) -> Option<Vec<(String, Vec<u8>)>> {
    let seeds = match name {
        "fork3" => vec![
            ("a_upper".to_string(), b"ABC".to_vec()),
            ("b_lower".to_string(), b"abc".to_vec()),
            ("c_short".to_string(), b"A".to_vec()),
        ],
        // Two families with identical coverage: cheap plain seeds (two pad
        // bytes larger) and roughly ten-times-costlier packed seeds.
        "keymatch" => {
            let payloads: [&[u8]; 5] = [b"LOAD", b"SAVE", b"MO", b"JUM", b"CA"];
            let mut seeds = Vec::new();
            for p in payloads {
                let tag = String::from_utf8_lossy(p).to_lowercase();
                seeds.push((format!("cheap_{tag}"), plain(p, 2)));
                seeds.push((format!("packed_{tag}"), packed(p, false)));
            }
            seeds
        }
        "keymatch-distinct" => [&b"LOAD"[..], b"SAVE", b"MO", b"JUM"]
            .iter()
            .map(|p| (format!("seed_{}", String::from_utf8_lossy(p).to_lowercase()), plain(p, 0)))
            .collect(),
        "nested" => {
            let payloads: [(&str, &[u8]); 5] = [
                ("paren", b"(((a)))"),
                ("square", b"[[[[b]]]]"),
                ("brace", b"{{c}}"),
                ("angle", b"<<<d>>>"),
                ("mixed", b"([{<e>}])"),
            ];
            let mut seeds = Vec::new();
            for (tag, p) in payloads {
                seeds.push((format!("cheap_{tag}"), plain(p, 1)));
                seeds.push((format!("packed_{tag}"), packed(p, true)));
            }
            seeds
        }
        _ => return None,
    };
    Some(seeds)
}
