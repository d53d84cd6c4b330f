//! Combinatorial label encoding: an injective map from instance labels
//! {1..N} to length-k strings over an l-symbol alphabet, plus its inverse.
//!
//! Encoding a labeled section digit-by-digit yields k colored images with at
//! most l nonzero colors each; classifying those independently and decoding
//! the per-pixel tuple turns an N-way clustering problem into k fixed-arity
//! classifications with k logarithmic in N. Symbol 0 is reserved for
//! background in every digit image and never appears inside a codeword.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::Grid;

/// How to decode a tuple of predicted symbols that is not a codeword.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecodePolicy {
    /// Invalid tuples decode to 0 (unassigned).
    Strict,
    /// An invalid tuple decodes to the unique codeword within Hamming
    /// distance `max_hamming`, or 0 when none or several exist.
    Nearest { max_hamming: u8 },
}

/// One digit image: the projection of the encoded segmentation at `digit_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColoredSection {
    pub z: usize,
    /// 1-based digit position within the codeword.
    pub digit_index: u8,
    /// Colors in {0} ∪ {1..l}; 0 is background.
    pub colors: Grid<u8>,
}

/// The encoding rule: N distinct random codewords of length k over {1..l}.
#[derive(Debug, Clone)]
pub struct Codebook {
    n_labels: u32,
    alphabet_size: u8,
    digits: u8,
    rng_seed: u64,
    /// Row-major N x k symbol table; row i holds the codeword of label i+1.
    code: Vec<u8>,
    inverse: HashMap<Box<[u8]>, u32>,
}

/// l^k with saturation, for capacity checks that must not overflow.
pub fn capacity(l: u8, k: u8) -> u128 {
    let mut cap: u128 = 1;
    for _ in 0..k {
        cap = cap.saturating_mul(l as u128);
    }
    cap
}

/// Smallest k >= 1 with l^k >= n.
pub fn min_digits(n: u32, l: u8) -> u8 {
    assert!(n >= 1 && l >= 2, "min_digits requires n >= 1, l >= 2");
    let mut k = 1u8;
    let mut cap = l as u128;
    while cap < n as u128 {
        k += 1;
        cap = cap.saturating_mul(l as u128);
    }
    k
}

/// Sample a codebook of N distinct uniform codewords (rejection sampling).
pub fn build_codebook(n_labels: u32, l: u8, k: u8, rng_seed: u64) -> Result<Codebook> {
    if l < 2 {
        return Err(Error::Config("alphabet size must be at least 2".into()));
    }
    if k < 1 {
        return Err(Error::Config("codeword length must be at least 1".into()));
    }
    if n_labels < 1 {
        return Err(Error::Config("codebook needs at least one label".into()));
    }
    let cap = capacity(l, k);
    if cap < n_labels as u128 {
        return Err(Error::CapacityExceeded {
            needed: n_labels as u64,
            capacity: cap.min(u64::MAX as u128) as u64,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut code = Vec::with_capacity(n_labels as usize * k as usize);
    let mut inverse: HashMap<Box<[u8]>, u32> = HashMap::with_capacity(n_labels as usize);
    let mut word = vec![0u8; k as usize];
    for label in 1..=n_labels {
        loop {
            for d in word.iter_mut() {
                *d = rng.gen_range(1..=l);
            }
            if !inverse.contains_key(word.as_slice()) {
                inverse.insert(word.clone().into_boxed_slice(), label);
                code.extend_from_slice(&word);
                break;
            }
        }
    }

    Ok(Codebook {
        n_labels,
        alphabet_size: l,
        digits: k,
        rng_seed,
        code,
        inverse,
    })
}

impl Codebook {
    pub fn n_labels(&self) -> u32 {
        self.n_labels
    }

    pub fn alphabet_size(&self) -> u8 {
        self.alphabet_size
    }

    pub fn digits(&self) -> u8 {
        self.digits
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Codeword of a label in 1..=N.
    pub fn codeword(&self, label: u32) -> &[u8] {
        assert!(label >= 1 && label <= self.n_labels, "label out of range");
        let k = self.digits as usize;
        let start = (label as usize - 1) * k;
        &self.code[start..start + k]
    }

    /// Exact inverse lookup.
    pub fn lookup(&self, tuple: &[u8]) -> Option<u32> {
        self.inverse.get(tuple).copied()
    }

    /// Smallest pairwise Hamming distance over all codeword pairs.
    pub fn min_pairwise_hamming(&self) -> u32 {
        let k = self.digits as usize;
        let mut best = u32::MAX;
        for i in 0..self.n_labels as usize {
            for j in (i + 1)..self.n_labels as usize {
                let a = &self.code[i * k..(i + 1) * k];
                let b = &self.code[j * k..(j + 1) * k];
                let d = a.iter().zip(b).filter(|(x, y)| x != y).count() as u32;
                best = best.min(d);
            }
        }
        best
    }

    /// The unique codeword within Hamming distance `max_hamming` of `tuple`,
    /// or None when there is no such codeword or more than one.
    fn nearest_in_ball(&self, tuple: &[u8], max_hamming: u8) -> Option<u32> {
        let k = self.digits as usize;
        let mut found: Option<u32> = None;
        for i in 0..self.n_labels as usize {
            let cw = &self.code[i * k..(i + 1) * k];
            let mut d = 0u32;
            for (a, b) in cw.iter().zip(tuple) {
                if a != b {
                    d += 1;
                    if d > max_hamming as u32 {
                        break;
                    }
                }
            }
            if d <= max_hamming as u32 {
                if found.is_some() {
                    return None; // ambiguous
                }
                found = Some(i as u32 + 1);
            }
        }
        found
    }

    /// Serialize as text: header `3C-CODEBOOK N l k seed`, then N lines
    /// `label d1 d2 ... dk`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            w,
            "3C-CODEBOOK {} {} {} {}",
            self.n_labels, self.alphabet_size, self.digits, self.rng_seed
        )?;
        for label in 1..=self.n_labels {
            write!(w, "{label}")?;
            for &d in self.codeword(label) {
                write!(w, " {d}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Codebook> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty codebook file".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "3C-CODEBOOK" {
            return Err(Error::Config("malformed codebook header".into()));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<u64>()
                .map_err(|_| Error::Config(format!("bad {what} in codebook header")))
        };
        let n_labels = parse(fields[1], "N")? as u32;
        let l = parse(fields[2], "l")? as u8;
        let k = parse(fields[3], "k")? as u8;
        let rng_seed = parse(fields[4], "seed")?;

        let mut code = vec![0u8; n_labels as usize * k as usize];
        let mut inverse = HashMap::with_capacity(n_labels as usize);
        let mut seen = vec![false; n_labels as usize];
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let label: u32 = it
                .next()
                .unwrap()
                .parse()
                .map_err(|_| Error::Config("bad label in codebook row".into()))?;
            if label < 1 || label > n_labels {
                return Err(Error::Config(format!("codebook label {label} out of range")));
            }
            let row: Vec<u8> = it
                .map(|t| {
                    t.parse::<u8>()
                        .ok()
                        .filter(|&d| d >= 1 && d <= l)
                        .ok_or_else(|| Error::Config("bad symbol in codebook row".into()))
                })
                .collect::<Result<_>>()?;
            if row.len() != k as usize {
                return Err(Error::Config("codebook row has wrong length".into()));
            }
            let start = (label as usize - 1) * k as usize;
            code[start..start + k as usize].copy_from_slice(&row);
            if inverse.insert(row.into_boxed_slice(), label).is_some() {
                return Err(Error::Config("duplicate codeword in codebook".into()));
            }
            seen[label as usize - 1] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Config("codebook file is missing labels".into()));
        }
        Ok(Codebook {
            n_labels,
            alphabet_size: l,
            digits: k,
            rng_seed,
            code,
            inverse,
        })
    }
}

/// Project a labeled section to its i-th digit image under the codebook.
pub fn encode_digit(
    labels: &Grid<u32>,
    z: usize,
    cb: &Codebook,
    digit_index: u8,
) -> Result<ColoredSection> {
    assert!(
        digit_index >= 1 && digit_index <= cb.digits,
        "digit index out of range"
    );
    let k = cb.digits as usize;
    let d = digit_index as usize - 1;
    let mut colors = Vec::with_capacity(labels.values().len());
    for &label in labels.values() {
        if label == 0 {
            colors.push(0);
        } else if label > cb.n_labels {
            return Err(Error::LabelOutOfRange {
                label,
                n_labels: cb.n_labels,
            });
        } else {
            colors.push(cb.code[(label as usize - 1) * k + d]);
        }
    }
    Ok(ColoredSection {
        z,
        digit_index,
        colors: Grid::from_vec(labels.rows(), labels.cols(), colors),
    })
}

/// Decode k digit images back to instance labels, pixel by pixel.
///
/// A pixel whose tuple contains a 0 symbol, or whose tuple is not (uniquely,
/// in nearest mode) matched by the codebook, decodes to 0.
pub fn decode_pixels(
    digits: &[ColoredSection],
    cb: &Codebook,
    policy: DecodePolicy,
) -> Result<Grid<u32>> {
    let k = cb.digits as usize;
    if digits.len() != k {
        return Err(Error::MissingDigit(format!(
            "expected {k} digit images, got {}",
            digits.len()
        )));
    }
    if let DecodePolicy::Nearest { max_hamming } = policy {
        if max_hamming as usize >= k {
            return Err(Error::Config("max_hamming must be < k".into()));
        }
    }

    // Order by digit index and verify indices are exactly 1..=k.
    let mut ordered: Vec<&ColoredSection> = digits.iter().collect();
    ordered.sort_by_key(|c| c.digit_index);
    for (i, c) in ordered.iter().enumerate() {
        if c.digit_index as usize != i + 1 {
            return Err(Error::MissingDigit(format!(
                "digit indices must be exactly 1..={k}"
            )));
        }
    }
    let shape = &ordered[0].colors;
    let z = ordered[0].z;
    for c in &ordered {
        if !c.colors.same_shape(shape) {
            return Err(Error::ShapeMismatch(
                "digit images differ in shape".into(),
            ));
        }
        if c.z != z {
            return Err(Error::ShapeMismatch(
                "digit images come from different sections".into(),
            ));
        }
    }

    let n_pixels = shape.values().len();
    let mut out = vec![0u32; n_pixels];
    let mut tuple = vec![0u8; k];
    // Nearest-mode lookups scan the codebook, so memoize per distinct tuple.
    let mut memo: HashMap<Vec<u8>, u32> = HashMap::new();
    'pixels: for p in 0..n_pixels {
        for (i, c) in ordered.iter().enumerate() {
            let sym = c.colors.values()[p];
            if sym == 0 {
                continue 'pixels;
            }
            tuple[i] = sym;
        }
        if let Some(label) = cb.lookup(&tuple) {
            out[p] = label;
        } else if let DecodePolicy::Nearest { max_hamming } = policy {
            let label = *memo
                .entry(tuple.clone())
                .or_insert_with(|| cb.nearest_in_ball(&tuple, max_hamming).unwrap_or(0));
            out[p] = label;
        }
    }
    Ok(Grid::from_vec(shape.rows(), shape.cols(), out))
}
