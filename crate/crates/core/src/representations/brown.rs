//! Brown clustering: greedy agglomerative merging of word classes that
//! keeps as much average mutual information of the class bigram model as
//! possible.
//!
//! Words enter an active window of clusters in order of decreasing
//! frequency. Each time the window overflows, the pair of active clusters
//! whose merge loses the least mutual information is merged. When all
//! words are placed, merging continues down to `C` clusters, which are
//! then merged on to a single root to give every cluster a bit path.
//!
//! Probabilities use whole-corpus bigram counts, including bigrams whose
//! other word is not active yet. Merge losses are maintained
//! incrementally, so a merge costs O(W²) for window size W. Candidate
//! losses within 1e-9 of the best one count as tied; ties go to the pair
//! with the lowest slot indices.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use log::info;

use super::{header, Block, BlockKind, ModelText, Representation};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::features::{Instance, BOS, EOS, LEXICAL};

pub const KIND: &str = "brown";
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BrownConfig {
    pub clusters: usize,
    /// Active window size; `None` means twice the cluster count.
    pub window: Option<usize>,
}

impl Default for BrownConfig {
    fn default() -> Self {
        BrownConfig {
            clusters: 200,
            window: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeStep {
    pub left: Vec<String>,
    pub right: Vec<String>,
    /// Mutual information lost by the merge.
    pub loss: f64,
}

/// Every merge in order, for inspection and testing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BrownTrace {
    /// Words in insertion order.
    pub insertion_order: Vec<String>,
    pub merges: Vec<MergeStep>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BrownModel {
    pub clusters: usize,
    /// `(word, bit path, count)` sorted by decreasing count, then word.
    pub entries: Vec<(String, String, u64)>,
    index: HashMap<String, usize>,
    /// Distinct paths, sorted; position is the cluster id.
    paths: Vec<String>,
}

struct Counts {
    total: f64,
    n2: Vec<f64>,
    nl: Vec<f64>,
    nr: Vec<f64>,
    cap: usize,
}

impl Counts {
    #[inline]
    fn q(&self, n: f64, nl: f64, nr: f64) -> f64 {
        if n <= 0.0 {
            0.0
        } else {
            n / self.total * (n * self.total / (nl * nr)).ln()
        }
    }

    #[inline]
    fn n(&self, a: usize, b: usize) -> f64 {
        self.n2[a * self.cap + b]
    }

    /// Change in the terms linking `k` when `i` and `j` are merged.
    #[inline]
    fn delta(&self, i: usize, j: usize, k: usize) -> f64 {
        let (nli, nri, nlj, nrj, nlk, nrk) = (self.nl[i], self.nr[i], self.nl[j], self.nr[j], self.nl[k], self.nr[k]);
        let before = self.q(self.n(i, k), nli, nrk)
            + self.q(self.n(k, i), nlk, nri)
            + self.q(self.n(j, k), nlj, nrk)
            + self.q(self.n(k, j), nlk, nrj);
        let after = self.q(self.n(i, k) + self.n(j, k), nli + nlj, nrk)
            + self.q(self.n(k, i) + self.n(k, j), nlk, nri + nrj);
        before - after
    }

    #[inline]
    fn local(&self, i: usize, j: usize) -> f64 {
        let before = self.q(self.n(i, i), self.nl[i], self.nr[i])
            + self.q(self.n(i, j), self.nl[i], self.nr[j])
            + self.q(self.n(j, i), self.nl[j], self.nr[i])
            + self.q(self.n(j, j), self.nl[j], self.nr[j]);
        let nc = self.n(i, i) + self.n(i, j) + self.n(j, i) + self.n(j, j);
        before - self.q(nc, self.nl[i] + self.nl[j], self.nr[i] + self.nr[j])
    }
}

struct Clustering {
    counts: Counts,
    active: Vec<bool>,
    members: Vec<Vec<usize>>,
    node: Vec<usize>,
    /// Merge loss for slot pairs `a < b`.
    loss: Vec<f64>,
}

impl Clustering {
    fn active_slots(&self) -> Vec<usize> {
        (0..self.counts.cap).filter(|&s| self.active[s]).collect()
    }

    fn full_loss(&self, i: usize, j: usize, slots: &[usize]) -> f64 {
        let mut l = self.counts.local(i, j);
        for &k in slots {
            if k != i && k != j {
                l += self.counts.delta(i, j, k);
            }
        }
        l
    }

    fn set_loss(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.loss[a * self.counts.cap + b] = v;
    }

    fn get_loss(&self, a: usize, b: usize) -> f64 {
        self.loss[a * self.counts.cap + b]
    }

    /// Adjusts every pair not involving `skip` by `sign · delta(i, j, k)`.
    fn adjust_pairs(&mut self, k: usize, sign: f64, slots: &[usize], skip: &[usize]) {
        for (x, &i) in slots.iter().enumerate() {
            if skip.contains(&i) {
                continue;
            }
            for &j in &slots[x + 1..] {
                if skip.contains(&j) {
                    continue;
                }
                let d = self.counts.delta(i, j, k);
                self.loss[i * self.counts.cap + j] += sign * d;
            }
        }
    }

    fn best_pair(&self) -> (usize, usize) {
        let slots = self.active_slots();
        let mut best = f64::INFINITY;
        for (x, &a) in slots.iter().enumerate() {
            for &b in &slots[x + 1..] {
                best = best.min(self.get_loss(a, b));
            }
        }
        for (x, &a) in slots.iter().enumerate() {
            for &b in &slots[x + 1..] {
                if self.get_loss(a, b) <= best + TIE_TOLERANCE {
                    return (a, b);
                }
            }
        }
        unreachable!("best_pair needs two active clusters")
    }

    fn merge(&mut self, a: usize, b: usize, new_node: usize) -> f64 {
        let cap = self.counts.cap;
        let loss = self.get_loss(a, b);
        let slots = self.active_slots();
        self.adjust_pairs(a, -1.0, &slots, &[a, b]);
        self.adjust_pairs(b, -1.0, &slots, &[a, b]);
        let c = &mut self.counts;
        let nab = c.n2[a * cap + b] + c.n2[b * cap + a] + c.n2[b * cap + b];
        for &k in &slots {
            if k != a && k != b {
                c.n2[a * cap + k] += c.n2[b * cap + k];
                c.n2[k * cap + a] += c.n2[k * cap + b];
            }
        }
        c.n2[a * cap + a] += nab;
        for k in 0..cap {
            c.n2[b * cap + k] = 0.0;
            c.n2[k * cap + b] = 0.0;
        }
        c.nl[a] += c.nl[b];
        c.nr[a] += c.nr[b];
        c.nl[b] = 0.0;
        c.nr[b] = 0.0;
        self.active[b] = false;
        let moved = std::mem::take(&mut self.members[b]);
        self.members[a].extend(moved);
        self.node[a] = new_node;
        let slots: Vec<usize> = slots.into_iter().filter(|&s| s != b).collect();
        self.adjust_pairs(a, 1.0, &slots, &[a]);
        for &k in &slots {
            if k != a {
                let l = self.full_loss(a, k, &slots);
                self.set_loss(a, k, l);
            }
        }
        loss
    }
}

/// Trains a model and returns it with the full merge trace.
pub fn train_brown(corpus: &Corpus, config: &BrownConfig) -> Result<(BrownModel, BrownTrace)> {
    let c_target = config.clusters;
    if c_target < 2 {
        return Err(Error::InvalidArgument("need at least 2 clusters".into()));
    }
    let mut word_ids: HashMap<&str, usize> = HashMap::new();
    let mut words: Vec<&str> = Vec::new();
    let mut freq: Vec<u64> = Vec::new();
    let mut bigrams: HashMap<(usize, usize), u64> = HashMap::new();
    for s in corpus.sentences() {
        let mut prev = None;
        for w in s.forms() {
            let id = *word_ids.entry(w).or_insert_with(|| {
                words.push(w);
                freq.push(0);
                words.len() - 1
            });
            freq[id] += 1;
            if let Some(p) = prev {
                *bigrams.entry((p, id)).or_insert(0) += 1;
            }
            prev = Some(id);
        }
    }
    let v = words.len();
    if v < c_target {
        return Err(Error::InvalidArgument(format!(
            "corpus has {v} word types, fewer than {c_target} clusters"
        )));
    }
    let mut rank: Vec<usize> = (0..v).collect();
    rank.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then_with(|| words[a].cmp(words[b])));
    let mut right: Vec<Vec<(usize, f64)>> = vec![Vec::new(); v];
    let mut left: Vec<Vec<(usize, f64)>> = vec![Vec::new(); v];
    let mut nl = vec![0.0; v];
    let mut nr = vec![0.0; v];
    let mut total = 0.0;
    let mut pairs: Vec<(&(usize, usize), &u64)> = bigrams.iter().collect();
    pairs.sort_unstable();
    for (&(a, b), &n) in pairs {
        let n = n as f64;
        right[a].push((b, n));
        if a != b {
            left[b].push((a, n));
        }
        nl[a] += n;
        nr[b] += n;
        total += n;
    }

    let window = config.window.unwrap_or(2 * c_target).max(c_target).min(v);
    let cap = window + 1;
    let mut st = Clustering {
        counts: Counts {
            total: total.max(1.0),
            n2: vec![0.0; cap * cap],
            nl: vec![0.0; cap],
            nr: vec![0.0; cap],
            cap,
        },
        active: vec![false; cap],
        members: vec![Vec::new(); cap],
        node: vec![0; cap],
        loss: vec![0.0; cap * cap],
    };
    let mut slot_of: Vec<Option<usize>> = vec![None; v];
    let mut trace = BrownTrace::default();
    // Tree nodes: leaves are word ids 0..v, internal nodes follow.
    let mut children: Vec<(usize, usize)> = Vec::new();
    let mut next_node = v;
    let mut clusters_left = 0usize;
    let mut final_nodes: Option<Vec<usize>> = None;

    let mut do_merge = |st: &mut Clustering, slot_of: &mut Vec<Option<usize>>, trace: &mut BrownTrace| {
        let (a, b) = st.best_pair();
        let left_members: Vec<String> = st.members[a].iter().map(|&w| words[w].to_string()).collect();
        let right_members: Vec<String> = st.members[b].iter().map(|&w| words[w].to_string()).collect();
        for &w in &st.members[b] {
            slot_of[w] = Some(a);
        }
        children.push((st.node[a], st.node[b]));
        let node = next_node;
        next_node += 1;
        let loss = st.merge(a, b, node);
        trace.merges.push(MergeStep {
            left: left_members,
            right: right_members,
            loss,
        });
    };

    info!("Brown clustering {v} word types into {c_target} clusters, window {window}");
    for &w in &rank {
        let s = (0..cap).find(|&s| !st.active[s]).expect("a free slot");
        let slots = st.active_slots();
        {
            let c = &mut st.counts;
            for &(w2, n) in &right[w] {
                if w2 == w {
                    c.n2[s * cap + s] += n;
                } else if let Some(k) = slot_of[w2] {
                    c.n2[s * cap + k] += n;
                }
            }
            for &(w1, n) in &left[w] {
                if let Some(k) = slot_of[w1] {
                    c.n2[k * cap + s] += n;
                }
            }
            c.nl[s] = nl[w];
            c.nr[s] = nr[w];
        }
        st.active[s] = true;
        st.members[s] = vec![w];
        st.node[s] = w;
        slot_of[w] = Some(s);
        trace.insertion_order.push(words[w].to_string());
        st.adjust_pairs(s, 1.0, &slots, &[]);
        let slots = st.active_slots();
        for &k in &slots {
            if k != s {
                let l = st.full_loss(s, k, &slots);
                st.set_loss(s, k, l);
            }
        }
        clusters_left += 1;
        if clusters_left > window {
            do_merge(&mut st, &mut slot_of, &mut trace);
            clusters_left -= 1;
        }
    }
    while clusters_left > 1 {
        if clusters_left == c_target {
            final_nodes = Some(st.active_slots().iter().map(|&s| st.node[s]).collect());
        }
        do_merge(&mut st, &mut slot_of, &mut trace);
        clusters_left -= 1;
    }
    let final_nodes = final_nodes.expect("C >= 2 clusters are reached before the root");
    let root = st.node[st.active_slots()[0]];

    // Bit paths from the root; `0` for the first-merged side.
    let mut path_of_node: HashMap<usize, String> = HashMap::new();
    let mut stack = vec![(root, String::new())];
    while let Some((n, p)) = stack.pop() {
        if n >= v {
            let (l, r) = children[n - v];
            stack.push((l, format!("{p}0")));
            stack.push((r, format!("{p}1")));
        }
        path_of_node.insert(n, p);
    }
    let mut word_path = vec![String::new(); v];
    for &f in &final_nodes {
        let p = path_of_node[&f].clone();
        let mut stack = vec![f];
        while let Some(n) = stack.pop() {
            if n < v {
                word_path[n] = p.clone();
            } else {
                let (l, r) = children[n - v];
                stack.push(l);
                stack.push(r);
            }
        }
    }
    let entries = rank
        .iter()
        .map(|&w| (words[w].to_string(), word_path[w].clone(), freq[w]))
        .collect();
    Ok((BrownModel::from_entries(c_target, entries)?, trace))
}

impl BrownModel {
    pub fn from_entries(clusters: usize, entries: Vec<(String, String, u64)>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, (w, _, _)) in entries.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate word `{w}`")));
            }
        }
        let mut paths: Vec<String> = entries.iter().map(|(_, p, _)| p.clone()).collect();
        paths.sort();
        paths.dedup();
        if paths.len() > clusters {
            return Err(Error::Format(format!("{} distinct paths for {clusters} clusters", paths.len())));
        }
        Ok(BrownModel {
            clusters,
            entries,
            index,
            paths,
        })
    }

    pub fn path(&self, word: &str) -> Option<&str> {
        self.index.get(word).map(|&i| self.entries[i].1.as_str())
    }

    /// Cluster id of a word; unseen words and boundaries get [`Self::unk`].
    pub fn cluster_id(&self, word: &str) -> usize {
        if word == BOS || word == EOS {
            return self.unk();
        }
        self.path(word)
            .and_then(|p| self.paths.binary_search_by(|x| x.as_str().cmp(p)).ok())
            .unwrap_or(self.unk())
    }

    pub fn unk(&self) -> usize {
        self.clusters
    }

    /// Distinct bit paths in use.
    pub fn paths(&self) -> &[String] {
        &self.paths
    }

    /// Words grouped by path.
    pub fn groups(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut g: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (w, p, _) in &self.entries {
            g.entry(p.as_str()).or_default().push(w.as_str());
        }
        g
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m = ModelText::parse(text, &[KIND])?;
        let clusters = m.meta_parsed("clusters")?;
        let mut entries = Vec::with_capacity(m.records.len());
        for rec in &m.records {
            let [w, p, n] = rec[..] else {
                return Err(Error::Format("expected `word<TAB>path<TAB>count`".into()));
            };
            if !p.bytes().all(|b| b == b'0' || b == b'1') {
                return Err(Error::Format(format!("bad bit path `{p}`")));
            }
            let n = n.parse().map_err(|_| Error::Format(format!("bad count `{n}`")))?;
            entries.push((w.to_string(), p.to_string(), n));
        }
        Self::from_entries(clusters, entries)
    }
}

impl Representation for BrownModel {
    fn name(&self) -> &str {
        KIND
    }

    fn kind(&self) -> BlockKind {
        BlockKind::Sparse
    }

    /// One cluster-or-UNK slot per lexical template.
    fn dim(&self) -> usize {
        LEXICAL.len() * (self.clusters + 1)
    }

    fn block(&self, instance: &Instance) -> Result<Block> {
        Ok(Block::Sparse(
            LEXICAL
                .iter()
                .map(|&t| (t * (self.clusters + 1) + self.cluster_id(&instance.values[t])) as u32)
                .collect(),
        ))
    }

    fn to_text(&self) -> String {
        let mut out = header(KIND);
        let _ = writeln!(out, "clusters {}", self.clusters);
        for (w, p, n) in &self.entries {
            let _ = writeln!(out, "{w}\t{p}\t{n}");
        }
        out
    }
}
