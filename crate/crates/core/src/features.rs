//! Text feature files shared by image features and token embeddings.
//!
//! Layout: an optional `N D` header line, then one line per item holding an
//! id followed by `D` whitespace-separated floats. This is the plain-text
//! word-embedding interchange layout.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::corpus::NO_OBJECT;
use crate::error::{Error, Result};

/// Id-addressed dense vectors of one dimension, kept in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        FeatureStore {
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value in vector {id:?}")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::InvalidArgument(format!("duplicate id {id:?}")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index
            .get(id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn require(&self, id: &str) -> Result<&[f64]> {
        self.get(id).ok_or_else(|| Error::MissingFeature(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .zip(self.data.chunks_exact(self.dim.max(1)))
            .map(|(id, v)| (id.as_str(), v))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn read<R: BufRead>(reader: R, context: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            context: context.to_string(),
            line,
            message,
        };
        let mut lines: Vec<(usize, String)> = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(context, e))?;
            if !line.trim().is_empty() {
                lines.push((n + 1, line));
            }
        }

        let header = lines.first().and_then(|(_, first)| {
            let fields: Vec<&str> = first.split_whitespace().collect();
            let (count, dim) = match fields.as_slice() {
                [a, b] => (a.parse::<usize>().ok()?, b.parse::<usize>().ok()?),
                _ => return None,
            };
            // A two-field data line (id + one float) can look like a header;
            // only accept it if the next line has D + 1 fields.
            match lines.get(1) {
                Some((_, next)) if next.split_whitespace().count() != dim + 1 => None,
                _ => Some((count, dim)),
            }
        });
        let body = if header.is_some() { &lines[1..] } else { &lines[..] };

        let dim = match header {
            Some((_, dim)) => dim,
            None => match body.first() {
                Some((_, line)) => line.split_whitespace().count() - 1,
                None => 0,
            },
        };
        let mut store = FeatureStore::new(dim);
        let mut row = Vec::with_capacity(dim);
        for (n, line) in body {
            let mut fields = line.split_whitespace();
            let id = fields.next().unwrap_or_default();
            row.clear();
            for field in fields {
                let value: f64 = field
                    .parse()
                    .map_err(|_| parse_err(*n, format!("invalid float {field:?}")))?;
                row.push(value);
            }
            store
                .insert(id, &row)
                .map_err(|e| parse_err(*n, e.to_string()))?;
        }
        if let Some((count, _)) = header {
            if count != store.len() {
                return Err(parse_err(
                    1,
                    format!("header declares {count} items, found {}", store.len()),
                ));
            }
        }
        Ok(store)
    }

    /// Writes the store with an `N D` header. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (id, vector) in self.iter() {
            write!(out, "{id}")?;
            for v in vector {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Token embeddings where the placeholder object `none` is the zero vector.
#[derive(Debug, Clone)]
pub struct Embeddings {
    store: FeatureStore,
    zero: Vec<f64>,
}

impl Embeddings {
    pub fn new(store: FeatureStore) -> Self {
        let zero = vec![0.0; store.dim()];
        Embeddings { store, zero }
    }

    pub fn load(path: &Path) -> Result<Self> {
        FeatureStore::load(path).map(Self::new)
    }

    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    pub fn lookup(&self, token: &str) -> Option<&[f64]> {
        if token == NO_OBJECT {
            return Some(&self.zero);
        }
        self.store.get(token)
    }

    pub fn store(&self) -> &FeatureStore {
        &self.store
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<FeatureStore> {
        FeatureStore::read(text.as_bytes(), "test")
    }

    #[test]
    fn reads_with_and_without_header() {
        let with = read("2 3\na 1 2 3\nb 4 5 6.5\n").unwrap();
        let without = read("a 1 2 3\n\nb 4 5 6.5\n").unwrap();
        assert_eq!(with, without);
        assert_eq!(with.dim(), 3);
        assert_eq!(with.get("b").unwrap(), &[4.0, 5.0, 6.5]);
    }

    #[test]
    fn numeric_ids_with_one_dimension_are_not_headers() {
        let store = read("10 2\n11 3\n").unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.get("10").unwrap(), &[2.0]);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(read("3 2\na 1 2\n").is_err());
        assert!(read("a 1 2\nb 1\n").is_err());
        assert!(read("a 1 x\n").is_err());
        assert!(read("a 1 2\na 3 4\n").is_err());
        assert!(read("a 1 NaN\n").is_err());
    }

    #[test]
    fn write_then_read_is_exact() {
        let mut store = FeatureStore::new(2);
        store.insert("x", &[0.1, -1.0 / 3.0]).unwrap();
        store.insert("y", &[1e-300, 2.5]).unwrap();
        let mut buf = Vec::new();
        store.write(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("2 2\n"));
        assert_eq!(read(std::str::from_utf8(&buf).unwrap()).unwrap(), store);
    }

    #[test]
    fn none_token_is_zero() {
        let emb = Embeddings::new(read("ride 1 2\n").unwrap());
        assert_eq!(emb.lookup("none").unwrap(), &[0.0, 0.0]);
        assert_eq!(emb.lookup("ride").unwrap(), &[1.0, 2.0]);
        assert!(emb.lookup("fly").is_none());
    }
}
