//! Embedding spaces, bilingual dictionaries and word graphs.
//!
//! Embedding files use the fastText text format: a `<count> <dim>` header,
//! then one `token v1 … vd` line per word, most frequent first. Values are
//! read as `f32` and held as `f64`.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSpace {
    words: Vec<String>,
    vectors: DenseMatrix,
    preprocessed: bool,
    /// Rows that could not be normalized during preprocessing.
    degenerate: Vec<usize>,
    index: HashMap<String, usize>,
}

impl EmbeddingSpace {
    pub fn new(words: Vec<String>, vectors: DenseMatrix) -> Result<Self> {
        if words.len() != vectors.rows() {
            return Err(Error::shape(format!(
                "{} words for {} vectors",
                words.len(),
                vectors.rows()
            )));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate word `{w}`")));
            }
        }
        Ok(Self {
            words,
            vectors,
            preprocessed: false,
            degenerate: Vec::new(),
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vectors(&self) -> &DenseMatrix {
        &self.vectors
    }

    pub fn is_preprocessed(&self) -> bool {
        self.preprocessed
    }

    pub fn degenerate_rows(&self) -> &[usize] {
        &self.degenerate
    }

    /// Frequency rank of `word` (its row index).
    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.index_of(word).map(|i| self.vectors.row(i))
    }

    /// Row indices of `words`, in order.
    pub fn indices<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<usize>> {
        words
            .iter()
            .map(|w| {
                self.index_of(w.as_ref())
                    .ok_or_else(|| Error::Lookup(w.as_ref().to_string()))
            })
            .collect()
    }

    /// Vectors of `words`, stacked in order.
    pub fn rows_for<S: AsRef<str>>(&self, words: &[S]) -> Result<DenseMatrix> {
        Ok(self.vectors.select_rows(&self.indices(words)?))
    }

    /// Same words with `vectors` replaced (e.g. rotated or perturbed copies).
    pub fn with_vectors(&self, vectors: DenseMatrix) -> Result<Self> {
        let mut out = Self::new(self.words.clone(), vectors)?;
        out.preprocessed = false;
        Ok(out)
    }
}

/// Reads a fastText text file, keeping at most `limit` rows.
pub fn load_vec(path: impl AsRef<Path>, limit: Option<usize>) -> Result<EmbeddingSpace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (space, skipped) = read_vec(BufReader::new(file), limit, &path.display().to_string())?;
    if skipped > 0 {
        warn!("{}: skipped {skipped} malformed rows", path.display());
    }
    Ok(space)
}

/// Parses fastText text from `reader`; returns the space and the number of
/// skipped rows (wrong value count, unparsable value, or repeated word).
pub fn read_vec(
    reader: impl BufRead,
    limit: Option<usize>,
    label: &str,
) -> Result<(EmbeddingSpace, usize)> {
    let parse_err = |msg: String| Error::Parse {
        path: label.to_string(),
        msg,
    };
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| parse_err(e.to_string()))?,
        None => return Err(parse_err("empty file, expected `<count> <dim>` header".into())),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (count, dim) = match fields.as_slice() {
        [c, d] => match (c.parse::<usize>(), d.parse::<usize>()) {
            (Ok(c), Ok(d)) if d > 0 => (c, d),
            _ => return Err(parse_err(format!("bad header `{header}`"))),
        },
        _ => return Err(parse_err(format!("bad header `{header}`"))),
    };
    let cap = limit.unwrap_or(count).min(count);
    let mut words = Vec::with_capacity(cap);
    let mut values = Vec::with_capacity(cap * dim);
    let mut seen = HashSet::with_capacity(cap);
    let mut skipped = 0;

    for line in lines {
        if limit.is_some_and(|l| words.len() >= l) {
            break;
        }
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        let line = line.trim_end_matches(['\n', '\r', ' ']);
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let word = parts.next().unwrap_or_default();
        let start = values.len();
        let mut ok = true;
        let mut n = 0;
        for tok in parts {
            match tok.parse::<f32>() {
                Ok(v) if v.is_finite() => {
                    values.push(v as f64);
                    n += 1;
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok || n != dim || word.is_empty() || !seen.insert(word.to_string()) {
            values.truncate(start);
            skipped += 1;
            continue;
        }
        words.push(word.to_string());
    }
    let n = words.len();
    let vectors = DenseMatrix::new(n, dim, values)?;
    Ok((EmbeddingSpace::new(words, vectors)?, skipped))
}

/// Writes fastText text; values go out as `f32`.
pub fn write_vec(space: &EmbeddingSpace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "{} {}", space.len(), space.dim()).map_err(io)?;
    for (i, word) in space.words.iter().enumerate() {
        write!(out, "{word}").map_err(io)?;
        for v in space.vectors.row(i) {
            write!(out, " {}", *v as f32).map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Normalize rows, subtract the column mean, normalize rows again.
pub fn preprocess(space: &EmbeddingSpace) -> Result<EmbeddingSpace> {
    if space.preprocessed {
        return Err(Error::domain("space is already preprocessed"));
    }
    let mut m = space.vectors.clone();
    let mut degenerate = HashSet::new();
    normalize_rows(&mut m, &mut degenerate);
    center_columns(&mut m);
    normalize_rows(&mut m, &mut degenerate);
    let mut degenerate: Vec<usize> = degenerate.into_iter().collect();
    degenerate.sort_unstable();
    if !degenerate.is_empty() {
        warn!("{} rows have zero norm and were zeroed", degenerate.len());
    }
    let mut out = space.clone();
    out.vectors = m;
    out.preprocessed = true;
    out.degenerate = degenerate;
    Ok(out)
}

fn normalize_rows(m: &mut DenseMatrix, degenerate: &mut HashSet<usize>) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            row.iter_mut().for_each(|v| *v /= norm);
        } else {
            row.iter_mut().for_each(|v| *v = 0.0);
            degenerate.insert(i);
        }
    }
}

fn center_columns(m: &mut DenseMatrix) {
    let n = m.rows();
    if n == 0 {
        return;
    }
    let mean: Vec<f64> = m.col_sums().iter().map(|s| s / n as f64).collect();
    for i in 0..n {
        for (v, mu) in m.row_mut(i).iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
}

/// `X·Xᵀ` over the rows of `subset`; the cosine graph when rows are unit.
pub fn build_graph<S: AsRef<str>>(space: &EmbeddingSpace, subset: &[S]) -> Result<DenseMatrix> {
    let x = space.rows_for(subset)?;
    x.matmul_t(&x)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub pairs: Vec<(String, String)>,
    pub one_to_one: bool,
}

impl Lexicon {
    pub fn new(pairs: Vec<(String, String)>) -> Self {
        let one_to_one = is_one_to_one(&pairs);
        Self { pairs, one_to_one }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> Vec<&str> {
        self.pairs.iter().map(|p| p.0.as_str()).collect()
    }

    pub fn targets(&self) -> Vec<&str> {
        self.pairs.iter().map(|p| p.1.as_str()).collect()
    }

    /// Same pairs with source and target swapped.
    pub fn reversed(&self) -> Self {
        Self {
            pairs: self.pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect(),
            one_to_one: self.one_to_one,
        }
    }
}

fn is_one_to_one(pairs: &[(String, String)]) -> bool {
    let mut src = HashSet::new();
    let mut tgt = HashSet::new();
    pairs.iter().all(|(a, b)| src.insert(a) && tgt.insert(b))
}

/// Reads `source<whitespace>target` lines. Blank lines are ignored.
pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_dictionary(&text, &path.display().to_string())
}

pub fn parse_dictionary(text: &str, label: &str) -> Result<Lexicon> {
    let mut pairs = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => {}
            [a, b] => pairs.push((a.to_string(), b.to_string())),
            _ => {
                return Err(Error::Parse {
                    path: label.to_string(),
                    msg: format!("line {}: expected two words, got `{line}`", no + 1),
                })
            }
        }
    }
    Ok(Lexicon::new(pairs))
}

/// Keeps a pair iff neither its source nor its target was already kept.
pub fn filter_one_to_one(lex: &Lexicon) -> Lexicon {
    let mut src = HashSet::new();
    let mut tgt = HashSet::new();
    let pairs = lex
        .pairs
        .iter()
        .filter(|(a, b)| {
            if src.contains(a) || tgt.contains(b) {
                return false;
            }
            src.insert(a.clone());
            tgt.insert(b.clone());
            true
        })
        .cloned()
        .collect();
    Lexicon {
        pairs,
        one_to_one: true,
    }
}

/// Drops pairs with a word missing from its space, orders the rest by source
/// frequency rank, and splits off the first `s` as seeds.
pub fn split_seeds(
    lex: &Lexicon,
    s: usize,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
) -> Result<(Lexicon, Lexicon)> {
    let mut ranked: Vec<(usize, &(String, String))> = lex
        .pairs
        .iter()
        .filter_map(|p| match (src.index_of(&p.0), tgt.index_of(&p.1)) {
            (Some(i), Some(_)) => Some((i, p)),
            _ => None,
        })
        .collect();
    let dropped = lex.len() - ranked.len();
    if dropped > 0 {
        warn!("dropped {dropped} dictionary pairs with out-of-vocabulary words");
    }
    if s > ranked.len() {
        return Err(Error::domain(format!(
            "{s} seeds requested from {} usable pairs",
            ranked.len()
        )));
    }
    ranked.sort_by_key(|(i, _)| *i);
    let mut pairs: Vec<(String, String)> = ranked.into_iter().map(|(_, p)| p.clone()).collect();
    let test = pairs.split_off(s);
    Ok((Lexicon::new(pairs), Lexicon::new(test)))
}

const CACHE_MAGIC: &[u8; 8] = b"GBLIVEC\0";
const CACHE_VERSION: u32 = 1;
const FLAG_PREPROCESSED: u32 = 1;
const FLAG_F64: u32 = 2;

/// Binary cache: magic, version, n, d, flags, little-endian rows, word table,
/// degenerate-row list. Rows are `f32` when every value is exactly
/// representable as one and `f64` otherwise, so the round trip is bit-exact.
pub fn write_cache(space: &EmbeddingSpace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let values = space.vectors.as_slice();
    let wide = values.iter().any(|&v| (v as f32) as f64 != v);
    let mut flags = 0;
    if space.preprocessed {
        flags |= FLAG_PREPROCESSED;
    }
    if wide {
        flags |= FLAG_F64;
    }
    out.write_all(CACHE_MAGIC).map_err(io)?;
    out.write_all(&CACHE_VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&(space.len() as u64).to_le_bytes()).map_err(io)?;
    out.write_all(&(space.dim() as u64).to_le_bytes()).map_err(io)?;
    out.write_all(&flags.to_le_bytes()).map_err(io)?;
    for &v in values {
        if wide {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        } else {
            out.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
        }
    }
    for w in &space.words {
        out.write_all(&(w.len() as u32).to_le_bytes()).map_err(io)?;
        out.write_all(w.as_bytes()).map_err(io)?;
    }
    out.write_all(&(space.degenerate.len() as u64).to_le_bytes()).map_err(io)?;
    for &i in &space.degenerate {
        out.write_all(&(i as u64).to_le_bytes()).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<EmbeddingSpace> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader {
        bytes: &bytes,
        pos: 0,
        label: path.display().to_string(),
    };
    if r.take(8)? != CACHE_MAGIC {
        return Err(r.err("not an embedding cache"));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(r.err(&format!("unsupported cache version {version}")));
    }
    let n = r.u64()? as usize;
    let d = r.u64()? as usize;
    let flags = r.u32()?;
    let count = n.checked_mul(d).ok_or_else(|| r.err("size overflow"))?;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(if flags & FLAG_F64 != 0 {
            f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"))
        } else {
            f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as f64
        });
    }
    let mut words = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u32()? as usize;
        let w = std::str::from_utf8(r.take(len)?).map_err(|_| r.err("word is not UTF-8"))?;
        words.push(w.to_string());
    }
    let k = r.u64()? as usize;
    let mut degenerate = Vec::with_capacity(k.min(n));
    for _ in 0..k {
        degenerate.push(r.u64()? as usize);
    }
    let mut space = EmbeddingSpace::new(words, DenseMatrix::new(n, d, values)?)?;
    space.preprocessed = flags & FLAG_PREPROCESSED != 0;
    space.degenerate = degenerate;
    Ok(space)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    label: String,
}

impl<'a> ByteReader<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::Parse {
            path: self.label.clone(),
            msg: msg.to_string(),
        }
    }

    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(self.err("truncated cache")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lex(pairs: &[(&str, &str)]) -> Lexicon {
        Lexicon::new(pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect())
    }

    fn space(words: &[&str], rows: &[&[f64]]) -> EmbeddingSpace {
        EmbeddingSpace::new(
            words.iter().map(|w| w.to_string()).collect(),
            DenseMatrix::from_rows(rows).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn reads_and_truncates() {
        let text = "3 2\nthe 0.1 -2.5\nof 3 4e-3 \nand 1.25 7\n";
        let (s, skipped) = read_vec(text.as_bytes(), None, "mem").unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(s.words(), &["the", "of", "and"]);
        assert_eq!(s.vector("of").unwrap(), &[3.0, 0.004f32 as f64]);
        assert_eq!(s.vector("the").unwrap(), &[0.1f32 as f64, -2.5]);
        let (s, _) = read_vec(text.as_bytes(), Some(2), "mem").unwrap();
        assert_eq!(s.words(), &["the", "of"]);
    }

    #[test]
    fn malformed_rows_are_skipped() {
        let text = "4 2\na 1 2\nb 1\nc 1 x\na 5 5\nd 3 4\n";
        let (s, skipped) = read_vec(text.as_bytes(), None, "mem").unwrap();
        assert_eq!(s.words(), &["a", "d"]);
        assert_eq!(skipped, 3);
    }

    #[test]
    fn bad_headers() {
        for text in ["", "hello\n", "3\n", "x 2\n", "3 0\n"] {
            assert!(matches!(read_vec(text.as_bytes(), None, "mem"), Err(Error::Parse { .. })));
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_vec("/nonexistent/file.vec", None).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("/nonexistent/file.vec"));
    }

    #[test]
    fn duplicate_words_rejected() {
        let m = DenseMatrix::zeros(2, 1);
        assert!(EmbeddingSpace::new(vec!["a".into(), "a".into()], m).is_err());
    }

    #[test]
    fn preprocess_single_row_degenerates() {
        let s = preprocess(&space(&["a"], &[&[3.0, 4.0]])).unwrap();
        assert_eq!(s.vectors().row(0), &[0.0, 0.0]);
        assert_eq!(s.degenerate_rows(), &[0]);
        assert!(preprocess(&s).is_err());
    }

    #[test]
    fn preprocess_antipodal_rows() {
        let s = preprocess(&space(&["a", "b"], &[&[0.6, 0.8], &[-0.6, -0.8]])).unwrap();
        assert!((s.vectors().get(0, 0) - 0.6).abs() < 1e-15);
        assert!((s.vectors().get(1, 1) + 0.8).abs() < 1e-15);
        assert!(s.degenerate_rows().is_empty());
    }

    #[test]
    fn preprocess_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DenseMatrix::from_fn(100, 10, |_, _| rng.random_range(-1.0..3.0));
        let words = (0..100).map(|i| format!("w{i}")).collect();
        let s = preprocess(&EmbeddingSpace::new(words, m.clone()).unwrap()).unwrap();
        for i in 0..100 {
            let n: f64 = s.vectors().row(i).iter().map(|v| v * v).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-9);
        }
        // recompute the centred intermediate independently
        let mut c = m;
        for i in 0..100 {
            let norm = c.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            c.row_mut(i).iter_mut().for_each(|v| *v /= norm);
        }
        let means: Vec<f64> = c.col_sums().iter().map(|v| v / 100.0).collect();
        for i in 0..100 {
            for (v, mu) in c.row_mut(i).iter_mut().zip(&means) {
                *v -= mu;
            }
        }
        assert!(c.col_sums().iter().all(|v| (v / 100.0).abs() < 1e-9));
        for i in 0..100 {
            let norm = c.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            for (a, b) in c.row(i).iter().zip(s.vectors().row(i)) {
                assert!((a / norm - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_to_one_filter() {
        let l = lex(&[("a", "x"), ("a", "y"), ("b", "x"), ("b", "z")]);
        assert!(!l.one_to_one);
        let f = filter_one_to_one(&l);
        assert_eq!(f, lex(&[("a", "x"), ("b", "z")]));
        assert!(f.one_to_one);
        let already = lex(&[("a", "x"), ("b", "y")]);
        assert_eq!(filter_one_to_one(&already).pairs, already.pairs);
        assert!(filter_one_to_one(&Lexicon::default()).is_empty());
    }

    #[test]
    fn dictionary_parsing() {
        let l = parse_dictionary("a x\n\nb\ty\n", "mem").unwrap();
        assert_eq!(l.pairs.len(), 2);
        assert!(parse_dictionary("a b c\n", "mem").is_err());
        assert!(parse_dictionary("", "mem").unwrap().is_empty());
    }

    #[test]
    fn seeds_follow_source_frequency() {
        let src = space(&["the", "of", "and", "cat"], &[&[1.0], &[2.0], &[3.0], &[4.0]]);
        let tgt = space(&["der", "von", "und"], &[&[1.0], &[2.0], &[3.0]]);
        let l = lex(&[("and", "und"), ("the", "der"), ("cat", "katze"), ("of", "von")]);
        let (seeds, test) = split_seeds(&l, 1, &src, &tgt).unwrap();
        assert_eq!(seeds, lex(&[("the", "der")]));
        assert_eq!(test, lex(&[("of", "von"), ("and", "und")]));

        let (seeds, test) = split_seeds(&l, 0, &src, &tgt).unwrap();
        assert!(seeds.is_empty());
        assert_eq!(test.len(), 3);
        let (seeds, test) = split_seeds(&l, 3, &src, &tgt).unwrap();
        assert_eq!(seeds.len(), 3);
        assert!(test.is_empty());
        assert!(matches!(split_seeds(&l, 4, &src, &tgt), Err(Error::Domain(_))));
    }

    #[test]
    fn graphs() {
        let s = space(&["a", "b", "c"], &[&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(build_graph(&s, &["a"]).unwrap().as_slice(), &[1.0]);
        assert_eq!(build_graph(&s, &["c", "a", "b"]).unwrap(), DenseMatrix::identity(3));
        assert!(matches!(build_graph(&s, &["zzz"]), Err(Error::Lookup(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = DenseMatrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
        let words: Vec<String> = (0..5).map(|i| format!("w{i}")).collect();
        let p = preprocess(&EmbeddingSpace::new(words.clone(), m).unwrap()).unwrap();
        let g = build_graph(&p, &words).unwrap();
        assert!(g.is_symmetric(1e-15));
        for i in 0..5 {
            assert!((g.get(i, i) - 1.0).abs() < 1e-9);
            for j in 0..5 {
                let (a, b) = (p.vectors().row(i), p.vectors().row(j));
                let cos: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                assert!((g.get(i, j) - cos).abs() < 1e-12);
                assert!(g.get(i, j).abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.vec");
        std::fs::write(&path, "3 3\nα 0.1 0.2 0.3\nb -1e-7 5 6.125\nc 7 8 9\n").unwrap();
        let a = load_vec(&path, None).unwrap();
        let out = dir.path().join("y.vec");
        write_vec(&a, &out).unwrap();
        assert_eq!(load_vec(&out, None).unwrap(), a);
    }

    #[test]
    fn cache_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw = DenseMatrix::from_fn(20, 6, |_, _| rng.random_range(-1.0f32..1.0) as f64);
        let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let s = EmbeddingSpace::new(words, raw).unwrap();
        for space in [s.clone(), preprocess(&s).unwrap()] {
            let path = dir.path().join("c.bin");
            write_cache(&space, &path).unwrap();
            let back = read_cache(&path).unwrap();
            assert_eq!(back, space);
            let bits = |m: &DenseMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(back.vectors()), bits(space.vectors()));
        }
        let bad = dir.path().join("bad.bin");
        std::fs::write(&bad, b"GBLIVEC\0\x01\0\0\0").unwrap();
        assert!(matches!(read_cache(&bad), Err(Error::Parse { .. })));
    }
}
