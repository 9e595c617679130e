//! Latent Dirichlet allocation over half-hour activity sequences, fitted by
//! collapsed Gibbs sampling.

use std::collections::BTreeMap;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActivityChain, ActivityType, LocalClock};

pub const DOC_START_SECS: i64 = 6 * 3600;
pub const DOC_END_SECS: i64 = 22 * 3600;
pub const TOKEN_SECS: i64 = 1800;
/// Half-hour tokens between 06:00 and 22:00.
pub const DOC_TOKENS: usize = 32;
/// Word id of the empty-slot token; ids below it follow [`ActivityType::ALL`].
pub const GAP: usize = 9;
pub const VOCAB_SIZE: usize = 10;

pub fn word_name(w: usize) -> &'static str {
    if w == GAP {
        "Gap"
    } else {
        ActivityType::from_index(w).map(|t| t.name()).unwrap_or("?")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityDocument {
    pub user_id: String,
    /// Local day for user-day documents, `None` for per-user aggregates.
    pub day: Option<i64>,
    pub tokens: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentUnit {
    #[default]
    UserDay,
    User,
}

/// The 32 tokens of one chain, or `None` when more than half are Gap.
pub fn tokenize_chain(chain: &ActivityChain, clock: &LocalClock) -> Option<Vec<usize>> {
    let base = clock.day_start(chain.day) + DOC_START_SECS;
    let mut tokens = Vec::with_capacity(DOC_TOKENS);
    for k in 0..DOC_TOKENS as i64 {
        let (s0, s1) = (base + k * TOKEN_SECS, base + (k + 1) * TOKEN_SECS);
        let mut cover = [0i64; VOCAB_SIZE];
        for s in chain.stays_only() {
            cover[s.activity_type().index()] += s.overlap(s0, s1);
        }
        cover[GAP] = (TOKEN_SECS - cover[..GAP].iter().sum::<i64>()).max(0);
        let mut best = 0;
        for w in 1..VOCAB_SIZE {
            if cover[w] > cover[best] {
                best = w;
            }
        }
        tokens.push(best);
    }
    let gaps = tokens.iter().filter(|&&w| w == GAP).count();
    (gaps * 2 <= DOC_TOKENS).then_some(tokens)
}

pub fn tokenize_chains(chains: &[ActivityChain], clock: &LocalClock, unit: DocumentUnit) -> Vec<ActivityDocument> {
    let day_docs = chains.iter().filter_map(|c| {
        tokenize_chain(c, clock).map(|tokens| ActivityDocument {
            user_id: c.user_id.clone(),
            day: Some(c.day),
            tokens,
        })
    });
    match unit {
        DocumentUnit::UserDay => day_docs.collect(),
        DocumentUnit::User => {
            let mut per_user: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for d in day_docs {
                per_user.entry(d.user_id).or_default().extend(d.tokens);
            }
            per_user
                .into_iter()
                .map(|(user_id, tokens)| ActivityDocument { user_id, day: None, tokens })
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorShape {
    Symmetric,
    Asymmetric,
}

/// A Dirichlet hyperparameter: a scalar for every component, or a named
/// shape resolved against the topic count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prior {
    Value(f64),
    Named(PriorShape),
}

impl Default for Prior {
    fn default() -> Self {
        Prior::Named(PriorShape::Symmetric)
    }
}

impl Prior {
    /// `Symmetric` is `1/k` per component; `Asymmetric` is `1/(i + sqrt(len))`
    /// for component `i` of `len`.
    pub fn resolve(&self, len: usize, k: usize) -> Result<Vec<f64>> {
        let v: Vec<f64> = match *self {
            Prior::Value(x) => vec![x; len],
            Prior::Named(PriorShape::Symmetric) => vec![1.0 / k as f64; len],
            Prior::Named(PriorShape::Asymmetric) => {
                let r = (len as f64).sqrt();
                (0..len).map(|i| 1.0 / (i as f64 + r)).collect()
            }
        };
        if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("Dirichlet prior {self} must be positive")));
        }
        Ok(v)
    }
}

impl std::fmt::Display for Prior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Prior::Value(x) => write!(f, "{x}"),
            Prior::Named(PriorShape::Symmetric) => f.write_str("symmetric"),
            Prior::Named(PriorShape::Asymmetric) => f.write_str("asymmetric"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdaParams {
    pub k: usize,
    pub alpha: Prior,
    pub beta: Prior,
    pub iters: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub unit: DocumentUnit,
    pub top_n: usize,
}

impl Default for LdaParams {
    fn default() -> Self {
        Self {
            k: 6,
            alpha: Prior::default(),
            beta: Prior::default(),
            iters: 1000,
            burn_in: 800,
            seed: 0,
            unit: DocumentUnit::UserDay,
            top_n: 4,
        }
    }
}

impl LdaParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("LDA needs k >= 1".into()));
        }
        if self.iters <= self.burn_in {
            return Err(Error::InvalidParameter(format!(
                "LDA iters ({}) must exceed burn_in ({})",
                self.iters, self.burn_in
            )));
        }
        Ok(())
    }
}

/// Collapsed Gibbs state: assignments plus the three count tables.
#[derive(Debug, Clone)]
pub struct GibbsSampler {
    k: usize,
    v: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    beta_sum: f64,
    docs: Vec<Vec<usize>>,
    z: Vec<Vec<usize>>,
    n_kt: Vec<u64>,
    n_k: Vec<u64>,
    n_mk: Vec<u64>,
    rng: ChaCha8Rng,
    weights: Vec<f64>,
}

impl GibbsSampler {
    /// Assigns every token a uniformly random topic, drawn in document order.
    pub fn new(docs: Vec<Vec<usize>>, v: usize, alpha: Vec<f64>, beta: Vec<f64>, seed: u64) -> Result<Self> {
        let k = alpha.len();
        if docs.iter().all(|d| d.is_empty()) {
            return Err(Error::EmptyInput("LDA corpus"));
        }
        if k == 0 || beta.len() != v {
            return Err(Error::LengthMismatch(beta.len(), v));
        }
        if let Some(&w) = docs.iter().flatten().find(|&&w| w >= v) {
            return Err(Error::InvalidParameter(format!("word id {w} outside vocabulary of {v}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut n_kt = vec![0; k * v];
        let mut n_k = vec![0; k];
        let mut n_mk = vec![0; docs.len() * k];
        let mut z = Vec::with_capacity(docs.len());
        for (m, doc) in docs.iter().enumerate() {
            let zm: Vec<usize> = doc.iter().map(|_| rng.random_range(0..k)).collect();
            for (&w, &t) in doc.iter().zip(&zm) {
                n_kt[t * v + w] += 1;
                n_k[t] += 1;
                n_mk[m * k + t] += 1;
            }
            z.push(zm);
        }
        Ok(Self {
            k,
            v,
            beta_sum: beta.iter().sum(),
            alpha,
            beta,
            docs,
            z,
            n_kt,
            n_k,
            n_mk,
            rng,
            weights: vec![0.0; k],
        })
    }

    /// One pass over every token in document order.
    pub fn sweep(&mut self) {
        let (k, v) = (self.k, self.v);
        for m in 0..self.docs.len() {
            for i in 0..self.docs[m].len() {
                let w = self.docs[m][i];
                let old = self.z[m][i];
                self.n_kt[old * v + w] -= 1;
                self.n_k[old] -= 1;
                self.n_mk[m * k + old] -= 1;
                let mut total = 0.0;
                for t in 0..k {
                    total += (self.n_kt[t * v + w] as f64 + self.beta[w]) / (self.n_k[t] as f64 + self.beta_sum)
                        * (self.n_mk[m * k + t] as f64 + self.alpha[t]);
                    self.weights[t] = total;
                }
                let u = self.rng.random::<f64>() * total;
                let new = self.weights.iter().position(|&c| c > u).unwrap_or(k - 1);
                self.n_kt[new * v + w] += 1;
                self.n_k[new] += 1;
                self.n_mk[m * k + new] += 1;
                self.z[m][i] = new;
            }
        }
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.z
    }

    /// Whether the count tables agree with the current assignments.
    pub fn counts_consistent(&self) -> bool {
        let (k, v) = (self.k, self.v);
        let mut n_kt = vec![0; k * v];
        let mut n_mk = vec![0; self.docs.len() * k];
        for (m, (doc, zm)) in self.docs.iter().zip(&self.z).enumerate() {
            for (&w, &t) in doc.iter().zip(zm) {
                n_kt[t * v + w] += 1;
                n_mk[m * k + t] += 1;
            }
        }
        let n_k: Vec<u64> = (0..k).map(|t| n_kt[t * v..(t + 1) * v].iter().sum()).collect();
        let per_doc_ok = (0..self.docs.len()).all(|m| self.n_mk[m * k..(m + 1) * k].iter().sum::<u64>() == self.docs[m].len() as u64);
        n_kt == self.n_kt && n_k == self.n_k && n_mk == self.n_mk && per_doc_ok
    }

    pub fn phi(&self) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|t| {
                (0..self.v)
                    .map(|w| (self.n_kt[t * self.v + w] as f64 + self.beta[w]) / (self.n_k[t] as f64 + self.beta_sum))
                    .collect()
            })
            .collect()
    }

    pub fn theta(&self) -> Vec<Vec<f64>> {
        let alpha_sum: f64 = self.alpha.iter().sum();
        (0..self.docs.len())
            .map(|m| {
                let n = self.docs[m].len() as f64;
                (0..self.k).map(|t| (self.n_mk[m * self.k + t] as f64 + self.alpha[t]) / (n + alpha_sum)).collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub k: usize,
    pub vocabulary: Vec<String>,
    pub phi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub z: Vec<Vec<usize>>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub seed: u64,
    pub iters: usize,
    pub burn_in: usize,
    pub documents: Vec<String>,
}

impl TopicModel {
    pub fn write_json<W: std::io::Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

pub fn doc_label(d: &ActivityDocument) -> String {
    match d.day {
        Some(day) => format!("{}@{}", d.user_id, day),
        None => d.user_id.clone(),
    }
}

/// Fits an LDA model with `params.iters` sweeps. The estimates use the
/// counts left by the final sweep; `observe` runs after every sweep.
pub fn fit_with<F: FnMut(usize, &GibbsSampler)>(docs: &[ActivityDocument], params: &LdaParams, mut observe: F) -> Result<TopicModel> {
    params.validate()?;
    if docs.is_empty() {
        return Err(Error::EmptyInput("LDA corpus"));
    }
    let alpha = params.alpha.resolve(params.k, params.k)?;
    let beta = params.beta.resolve(VOCAB_SIZE, params.k)?;
    let mut g = GibbsSampler::new(docs.iter().map(|d| d.tokens.clone()).collect(), VOCAB_SIZE, alpha.clone(), beta.clone(), params.seed)?;
    for it in 0..params.iters {
        g.sweep();
        observe(it, &g);
    }
    Ok(TopicModel {
        k: params.k,
        vocabulary: (0..VOCAB_SIZE).map(|w| word_name(w).to_string()).collect(),
        phi: g.phi(),
        theta: g.theta(),
        z: g.z,
        alpha,
        beta,
        seed: params.seed,
        iters: params.iters,
        burn_in: params.burn_in,
        documents: docs.iter().map(doc_label).collect(),
    })
}

pub fn gibbs_fit(docs: &[ActivityDocument], params: &LdaParams) -> Result<TopicModel> {
    fit_with(docs, params, |_, _| {})
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    pub per_topic: Vec<f64>,
    pub mean: f64,
}

/// Word ids of a topic by descending probability, ties to the lower id.
pub fn top_words(phi_row: &[f64], n: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..phi_row.len()).collect();
    ids.sort_by(|&a, &b| phi_row[b].total_cmp(&phi_row[a]).then(a.cmp(&b)));
    ids.truncate(n);
    ids
}

/// UMass coherence: for the `top_n` words of each topic in descending-phi
/// order, the sum over `i < j` of `ln((D(w_i, w_j) + 1) / D(w_j))`, where
/// `D` counts documents containing the word(s). Pairs whose `w_j` never
/// occurs are skipped.
pub fn umass_coherence(phi: &[Vec<f64>], docs: &[ActivityDocument], top_n: usize) -> Coherence {
    let v = phi.first().map_or(0, |r| r.len());
    let mut present: Vec<Vec<bool>> = Vec::with_capacity(docs.len());
    for d in docs {
        let mut p = vec![false; v];
        for &w in &d.tokens {
            if w < v {
                p[w] = true;
            }
        }
        present.push(p);
    }
    let df = |a: usize| present.iter().filter(|p| p[a]).count();
    let co = |a: usize, b: usize| present.iter().filter(|p| p[a] && p[b]).count();
    let per_topic: Vec<f64> = phi
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let top = top_words(row, top_n);
            let mut score = 0.0;
            for j in 1..top.len() {
                let dj = df(top[j]);
                if dj == 0 {
                    warn!("topic {k}: word {} never occurs; pair excluded", word_name(top[j]));
                    continue;
                }
                for i in 0..j {
                    score += ((co(top[i], top[j]) as f64 + 1.0) / dj as f64).ln();
                }
            }
            score
        })
        .collect();
    let mean = per_topic.iter().sum::<f64>() / per_topic.len().max(1) as f64;
    Coherence { per_topic, mean }
}

/// Hellinger distance between two probability vectors.
pub fn hellinger(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    for d in [p, q] {
        let s: f64 = d.iter().sum();
        if d.iter().any(|&x| !(x >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized(s));
        }
    }
    let ss: f64 = p.iter().zip(q).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    Ok((ss / 2.0).sqrt().min(1.0))
}

/// Pairwise Hellinger distances between topic rows.
pub fn topic_distances(phi: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    phi.iter().map(|a| phi.iter().map(|b| hellinger(a, b)).collect()).collect()
}

/// The permutation `perm` of estimated topics minimizing the summed
/// Hellinger distance, with `perm[i]` matched to `truth[i]`. Exhaustive,
/// so intended for small topic counts.
pub fn match_topics(truth: &[Vec<f64>], est: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    if truth.len() != est.len() || truth.len() > 9 {
        return Err(Error::InvalidParameter("topic matching needs equal, small topic counts".into()));
    }
    let n = truth.len();
    let cost: Vec<Vec<f64>> = truth.iter().map(|t| est.iter().map(|e| hellinger(t, e)).collect::<Result<_>>()).collect::<Result<_>>()?;
    let mut best = (Vec::new(), f64::INFINITY);
    let mut perm: Vec<usize> = (0..n).collect();
    permute(&mut perm, 0, &mut |p| {
        let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        if c < best.1 {
            best = (p.to_vec(), c);
        }
    });
    Ok((best.0, best.1 / n.max(1) as f64))
}

fn permute(p: &mut Vec<usize>, at: usize, f: &mut dyn FnMut(&[usize])) {
    if at == p.len() {
        f(p);
        return;
    }
    for i in at..p.len() {
        p.swap(at, i);
        permute(p, at + 1, f);
        p.swap(at, i);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub alphas: Vec<Prior>,
    pub betas: Vec<Prior>,
    pub ks: Vec<usize>,
    pub iters: usize,
    pub burn_in: usize,
    pub top_n: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        let grid = || {
            vec![
                Prior::Value(0.001),
                Prior::Value(0.031),
                Prior::Value(0.061),
                Prior::Value(0.091),
                Prior::Named(PriorShape::Symmetric),
                Prior::Named(PriorShape::Asymmetric),
            ]
        };
        Self {
            alphas: grid(),
            betas: grid(),
            ks: (1..=10).collect(),
            iters: 200,
            burn_in: 100,
            top_n: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub alpha: String,
    pub beta: String,
    pub k: usize,
    pub coherence: Option<f64>,
    pub error: Option<String>,
}

/// Fits one model per (alpha, beta, k) cell in parallel. Cell `i` in
/// alpha-major order uses seed `seed + i`; failures are recorded per cell.
pub fn hyperparameter_sweep(docs: &[ActivityDocument], grid: &SweepGrid, seed: u64) -> Result<Vec<SweepCell>> {
    if grid.alphas.is_empty() || grid.betas.is_empty() || grid.ks.is_empty() {
        return Err(Error::EmptyInput("sweep grid"));
    }
    let mut cells = Vec::new();
    for a in &grid.alphas {
        for b in &grid.betas {
            for &k in &grid.ks {
                cells.push((*a, *b, k));
            }
        }
    }
    Ok(cells
        .par_iter()
        .enumerate()
        .map(|(i, &(alpha, beta, k))| {
            let params = LdaParams {
                k,
                alpha,
                beta,
                iters: grid.iters,
                burn_in: grid.burn_in,
                seed: seed.wrapping_add(i as u64),
                unit: DocumentUnit::UserDay,
                top_n: grid.top_n,
            };
            let fit = gibbs_fit(docs, &params);
            let (coherence, error) = match fit {
                Ok(m) => (Some(umass_coherence(&m.phi, docs, grid.top_n).mean), None),
                Err(e) => {
                    warn!("sweep cell alpha={alpha} beta={beta} k={k} failed: {e}");
                    (None, Some(e.to_string()))
                }
            };
            SweepCell {
                alpha: alpha.to_string(),
                beta: beta.to_string(),
                k,
                coherence,
                error,
            }
        })
        .collect())
}

fn argmax_first(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Dominant topic of every document.
pub fn assign_groups(model: &TopicModel) -> Vec<usize> {
    model.theta.iter().map(|r| argmax_first(r)).collect()
}

/// Dominant topic of each user's mean document-topic distribution.
pub fn assign_user_groups(model: &TopicModel, docs: &[ActivityDocument]) -> BTreeMap<String, usize> {
    let mut acc: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for (d, row) in docs.iter().zip(&model.theta) {
        let e = acc.entry(d.user_id.clone()).or_insert_with(|| (vec![0.0; model.k], 0));
        for (a, x) in e.0.iter_mut().zip(row) {
            *a += x;
        }
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(u, (sum, n))| {
            let mean: Vec<f64> = sum.iter().map(|x| x / n as f64).collect();
            (u, argmax_first(&mean))
        })
        .collect()
}
