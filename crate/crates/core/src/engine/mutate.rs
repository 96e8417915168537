//! Havoc mutation and splicing. Every output is a pure function of the
//! inputs and the RNG state.

use rand::Rng;

use super::EngineError;

pub const DEFAULT_MAX_INPUT_LEN: usize = 1 << 20;
const ARITH_MAX: u32 = 35;
const MAX_BLOCK: usize = 64;

const INTERESTING_8: [i8; 9] = [-128, -1, 0, 1, 16, 32, 64, 100, 127];
const INTERESTING_16: [i16; 10] = [-32768, -129, 128, 255, 256, 512, 1000, 1024, 4096, 32767];
const INTERESTING_32: [i32; 8] = [i32::MIN, -100663046, -32769, 32768, 65535, 65536, 100663045, i32::MAX];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    FlipBit,
    SetByte,
    DeleteRange,
    InsertRange,
    Arith,
    Interesting,
    DuplicateBlock,
}

const OPS: [Op; 7] = [
    Op::FlipBit,
    Op::SetByte,
    Op::DeleteRange,
    Op::InsertRange,
    Op::Arith,
    Op::Interesting,
    Op::DuplicateBlock,
];

fn applicable(op: Op, len: usize, max_len: usize) -> bool {
    match op {
        Op::FlipBit | Op::SetByte | Op::Arith | Op::Interesting => len >= 1,
        Op::DeleteRange => len >= 2,
        Op::InsertRange => len < max_len,
        Op::DuplicateBlock => len >= 1 && len < max_len,
    }
}

fn block_len(rng: &mut impl Rng, limit: usize) -> usize {
    rng.gen_range(1..=limit.clamp(1, MAX_BLOCK))
}

/// Writes `value` as a `width`-byte word at `pos`, little or big endian.
fn put_word(data: &mut [u8], pos: usize, width: usize, value: u32, big_endian: bool) {
    let bytes = value.to_le_bytes();
    for i in 0..width {
        let b = if big_endian { bytes[width - 1 - i] } else { bytes[i] };
        data[pos + i] = b;
    }
}

fn get_word(data: &[u8], pos: usize, width: usize, big_endian: bool) -> u32 {
    let mut v = 0u32;
    for i in 0..width {
        let b = if big_endian { data[pos + i] } else { data[pos + width - 1 - i] };
        v = (v << 8) | b as u32;
    }
    v
}

fn pick_width(rng: &mut impl Rng, len: usize) -> usize {
    let widths: &[usize] = match len {
        0 => &[],
        1 => &[1],
        2 | 3 => &[1, 2],
        _ => &[1, 2, 4],
    };
    widths[rng.gen_range(0..widths.len())]
}

fn apply(op: Op, data: &mut Vec<u8>, rng: &mut impl Rng, max_len: usize) {
    let len = data.len();
    match op {
        Op::FlipBit => {
            let bit = rng.gen_range(0..len * 8);
            data[bit / 8] ^= 0x80 >> (bit % 8);
        }
        Op::SetByte => {
            let pos = rng.gen_range(0..len);
            data[pos] = rng.gen();
        }
        Op::DeleteRange => {
            let n = block_len(rng, len - 1);
            let pos = rng.gen_range(0..=len - n);
            data.drain(pos..pos + n);
        }
        Op::InsertRange => {
            let n = block_len(rng, max_len - len);
            let pos = rng.gen_range(0..=len);
            let block: Vec<u8> = if len > 0 && rng.gen_bool(0.5) {
                let from = rng.gen_range(0..len);
                let n = n.min(len - from);
                data[from..from + n].to_vec()
            } else {
                let fill: u8 = rng.gen();
                vec![fill; n]
            };
            data.splice(pos..pos, block);
        }
        Op::Arith => {
            let width = pick_width(rng, len);
            let pos = rng.gen_range(0..=len - width);
            let big = rng.gen_bool(0.5);
            let delta = rng.gen_range(1..=ARITH_MAX);
            let mask = if width == 4 { u32::MAX } else { (1u32 << (8 * width)) - 1 };
            let v = get_word(data, pos, width, big);
            let v = if rng.gen_bool(0.5) { v.wrapping_add(delta) } else { v.wrapping_sub(delta) } & mask;
            put_word(data, pos, width, v, big);
        }
        Op::Interesting => {
            let width = pick_width(rng, len);
            let pos = rng.gen_range(0..=len - width);
            let big = rng.gen_bool(0.5);
            let v = match width {
                1 => INTERESTING_8[rng.gen_range(0..INTERESTING_8.len())] as u8 as u32,
                2 => INTERESTING_16[rng.gen_range(0..INTERESTING_16.len())] as u16 as u32,
                _ => INTERESTING_32[rng.gen_range(0..INTERESTING_32.len())] as u32,
            };
            put_word(data, pos, width, v, big);
        }
        Op::DuplicateBlock => {
            let n = block_len(rng, len.min(max_len - len));
            let from = rng.gen_range(0..=len - n);
            let block = data[from..from + n].to_vec();
            let to = rng.gen_range(0..=len);
            data.splice(to..to, block);
        }
    }
}

/// Applies `stack_count` randomly chosen havoc operators to `input`.
///
/// Operators that need content are skipped on inputs too short for them;
/// the result is never empty and never longer than `max_len`.
pub fn havoc_mutate(
    input: &[u8],
    rng: &mut impl Rng,
    stack_count: u32,
    max_len: usize,
) -> Result<Vec<u8>, EngineError> {
    if stack_count == 0 {
        return Err(EngineError::Precondition("havoc stack count must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(EngineError::Precondition("maximum input length must be at least 1".into()));
    }
    let mut data = input[..input.len().min(max_len)].to_vec();
    for _ in 0..stack_count {
        let mut op = OPS[rng.gen_range(0..OPS.len())];
        if !applicable(op, data.len(), max_len) {
            let choices: Vec<Op> = OPS.iter().copied().filter(|&o| applicable(o, data.len(), max_len)).collect();
            if choices.is_empty() {
                continue;
            }
            op = choices[rng.gen_range(0..choices.len())];
        }
        apply(op, &mut data, rng, max_len);
    }
    if data.is_empty() {
        data.push(rng.gen());
    }
    Ok(data)
}

/// Crossover at one random position shared by both parents: the head of
/// `a` followed by the tail of `b`. Never empty.
pub fn splice(a: &[u8], b: &[u8], rng: &mut impl Rng) -> Vec<u8> {
    let split = rng.gen_range(0..=a.len().min(b.len()));
    let mut out = a[..split].to_vec();
    out.extend_from_slice(&b[split..]);
    if out.is_empty() {
        out = if a.is_empty() { vec![0] } else { a.to_vec() };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn golden_single_stack() {
        let out = havoc_mutate(b"abc", &mut rng(42), 1, DEFAULT_MAX_INPUT_LEN).unwrap();
        assert_eq!(out, GOLDEN_ABC_42);
        let again = havoc_mutate(b"abc", &mut rng(42), 1, DEFAULT_MAX_INPUT_LEN).unwrap();
        assert_eq!(out, again);
    }

    const GOLDEN_ABC_42: &[u8] = b"aEc";

    #[test]
    fn zero_stack_is_rejected() {
        assert!(matches!(havoc_mutate(b"abc", &mut rng(1), 0, 16), Err(EngineError::Precondition(_))));
    }

    #[test]
    fn empty_input_can_grow() {
        for seed in 0..50 {
            let out = havoc_mutate(b"", &mut rng(seed), 1, 16).unwrap();
            assert!(!out.is_empty() && out.len() <= 16);
        }
    }

    #[test]
    fn respects_max_len() {
        for seed in 0..50 {
            let out = havoc_mutate(&[7u8; 10], &mut rng(seed), 64, 12).unwrap();
            assert!(out.len() <= 12, "{} bytes", out.len());
        }
    }

    #[test]
    fn word_helpers_round_trip() {
        let mut d = [0u8; 4];
        put_word(&mut d, 0, 2, 0x1234, true);
        assert_eq!(&d[..2], &[0x12, 0x34]);
        assert_eq!(get_word(&d, 0, 2, true), 0x1234);
        put_word(&mut d, 0, 4, 0xdeadbeef, false);
        assert_eq!(d, [0xef, 0xbe, 0xad, 0xde]);
        assert_eq!(get_word(&d, 0, 4, false), 0xdeadbeef);
    }

    #[test]
    fn splice_single_bytes_enumerates_both_parents() {
        let seen: BTreeSet<Vec<u8>> = (0..64).map(|s| splice(b"a", b"b", &mut rng(s))).collect();
        let want: BTreeSet<Vec<u8>> = [b"a".to_vec(), b"b".to_vec()].into_iter().collect();
        assert_eq!(seen, want);
    }

    #[test]
    fn splice_identical_parents() {
        for s in 0..20 {
            assert_eq!(splice(b"hello", b"hello", &mut rng(s)), b"hello");
        }
        assert_eq!(splice(b"", b"", &mut rng(0)), vec![0]);
    }

    proptest! {
        #[test]
        fn havoc_is_deterministic_and_bounded(input in proptest::collection::vec(any::<u8>(), 0..64),
                                              seed in any::<u64>(), stack in 1u32..128) {
            let a = havoc_mutate(&input, &mut rng(seed), stack, 256).unwrap();
            let b = havoc_mutate(&input, &mut rng(seed), stack, 256).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(!a.is_empty() && a.len() <= 256);
        }

        #[test]
        fn splice_is_head_plus_tail(a in proptest::collection::vec(any::<u8>(), 1..32),
                                    b in proptest::collection::vec(any::<u8>(), 1..32), seed in any::<u64>()) {
            let out = splice(&a, &b, &mut rng(seed));
            let ok = (0..=a.len().min(b.len())).any(|k| out[..] == [&a[..k], &b[k..]].concat()[..]);
            prop_assert!(ok);
        }
    }
}
