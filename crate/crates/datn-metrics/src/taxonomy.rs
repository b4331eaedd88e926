//! Rooted word taxonomy parsed from an indented-tree text file: one
//! token per line, two spaces of indentation per depth level, a single
//! root at zero indentation. The root has depth 1.

use std::collections::HashMap;

use crate::error::MetricsError;
use crate::Result;

#[derive(Debug, Clone)]
pub struct Taxonomy {
    names: Vec<String>,
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
    index: HashMap<String, usize>,
}

impl Taxonomy {
    pub fn parse(text: &str, path: &str) -> Result<Taxonomy> {
        let err = |line: usize, message: String| MetricsError::TaxonomyParse {
            path: path.to_owned(),
            line,
            message,
        };
        let mut names: Vec<String> = Vec::new();
        let mut parent: Vec<Option<usize>> = Vec::new();
        let mut depth: Vec<usize> = Vec::new();
        // Most recent node at each depth; candidate parents for what follows.
        let mut last_at_depth: Vec<usize> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let indent = line.len() - line.trim_start_matches(' ').len();
            if indent % 2 != 0 {
                return Err(err(lineno + 1, format!("odd indentation of {indent} spaces")));
            }
            let token = line.trim_start();
            if token.contains(char::is_whitespace) {
                return Err(err(lineno + 1, format!("token '{token}' contains whitespace")));
            }
            let level = indent / 2; // depth level - 1
            if level == 0 && !names.is_empty() {
                return Err(err(lineno + 1, "multiple roots".to_owned()));
            }
            if level > last_at_depth.len() {
                return Err(err(
                    lineno + 1,
                    format!("indentation jumps past depth {}", last_at_depth.len()),
                ));
            }
            let parent_idx = if level == 0 {
                None
            } else {
                Some(last_at_depth[level - 1])
            };
            let idx = names.len();
            names.push(token.to_owned());
            parent.push(parent_idx);
            depth.push(level + 1);
            last_at_depth.truncate(level);
            last_at_depth.push(idx);
        }
        if names.is_empty() {
            return Err(err(1, "empty taxonomy".to_owned()));
        }
        let mut index = HashMap::new();
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(err(1, format!("duplicate token '{name}'")));
            }
        }
        Ok(Taxonomy {
            names,
            parent,
            depth,
            index,
        })
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn depth_of(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .map(|&i| self.depth[i])
            .ok_or_else(|| MetricsError::UnknownToken(token.to_owned()))
    }

    fn ancestors(&self, mut idx: usize) -> Vec<usize> {
        let mut chain = vec![idx];
        while let Some(p) = self.parent[idx] {
            chain.push(p);
            idx = p;
        }
        chain
    }

    /// Wu-Palmer similarity `2 * depth(lca) / (depth(a) + depth(b))`.
    pub fn wu_palmer(&self, a: &str, b: &str) -> Result<f64> {
        let ia = *self
            .index
            .get(a)
            .ok_or_else(|| MetricsError::UnknownToken(a.to_owned()))?;
        let ib = *self
            .index
            .get(b)
            .ok_or_else(|| MetricsError::UnknownToken(b.to_owned()))?;
        let chain_a = self.ancestors(ia);
        let chain_b = self.ancestors(ib);
        let lca = chain_a
            .iter()
            .find(|i| chain_b.contains(i))
            .copied()
            .expect("single root guarantees a common ancestor");
        Ok(2.0 * self.depth[lca] as f64 / (self.depth[ia] + self.depth[ib]) as f64)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}
